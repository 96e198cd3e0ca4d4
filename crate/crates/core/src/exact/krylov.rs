//! Lanczos propagation of |ψ(t)⟩ = exp(−iHt)|ψ(0)⟩.
//!
//! Each step builds an m-dimensional Krylov space with full
//! reorthogonalization and exponentiates the tridiagonal projection. The
//! step length is the largest one whose a posteriori error estimate
//! β·β_m·|∫₀^τ e_mᵀ exp(−isT) e₁ ds| stays below the tolerance; the same Krylov
//! space is reused while shrinking. Projected propagation is unitary and
//! commutes with the projected Hamiltonian, so norm and energy are kept to
//! rounding.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use super::basis::CIBasis;
use super::hamiltonian::SparseHamiltonian;
use crate::error::{Error, Result};

/// Largest dimension accepted by [`dense_propagate`].
pub const DENSE_ORACLE_LIMIT: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KrylovOptions {
    pub dimension: usize,
    pub tolerance: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            dimension: 30,
            tolerance: 1e-11,
        }
    }
}

impl KrylovOptions {
    pub fn validate(&self) -> Result<()> {
        if self.dimension < 2 {
            return Err(Error::Config(format!(
                "Krylov dimension must be at least 2, got {}",
                self.dimension
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!(
                "Krylov tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        Ok(())
    }
}

/// State vector in a [`CIBasis`] at a given time.
#[derive(Clone, Debug, PartialEq)]
pub struct CIState {
    pub amplitudes: Vec<Complex64>,
    pub time: f64,
}

impl CIState {
    /// Basis state `index` at t = 0.
    pub fn basis_state(dim: usize, index: usize) -> Result<Self> {
        if index >= dim {
            return Err(Error::Domain(format!("state {index} outside basis of {dim}")));
        }
        let mut amplitudes = vec![Complex64::new(0.0, 0.0); dim];
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(Self {
            amplitudes,
            time: 0.0,
        })
    }

    /// Atom in `level`, field in the vacuum.
    pub fn excited(basis: &CIBasis, level: usize) -> Result<Self> {
        if level >= basis.levels() {
            return Err(Error::Domain(format!("level {level} outside atom of {}", basis.levels())));
        }
        Self::basis_state(basis.dim(), basis.index(level, 0))
    }

    pub fn norm(&self) -> f64 {
        norm(&self.amplitudes)
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}

/// Running counters of a [`Propagator`].
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct KrylovStats {
    pub steps: usize,
    pub matvecs: usize,
    pub smallest_step: f64,
}

/// Reusable Lanczos workspace bound to one Hamiltonian.
pub struct Propagator<'a> {
    h: &'a SparseHamiltonian,
    options: KrylovOptions,
    basis: Vec<Vec<Complex64>>,
    w: Vec<Complex64>,
    step: f64,
    stats: KrylovStats,
}

impl<'a> Propagator<'a> {
    pub fn new(h: &'a SparseHamiltonian, options: KrylovOptions) -> Result<Self> {
        options.validate()?;
        let m = options.dimension.min(h.dim()).max(1);
        Ok(Self {
            h,
            options,
            basis: vec![vec![Complex64::new(0.0, 0.0); h.dim()]; m],
            w: vec![Complex64::new(0.0, 0.0); h.dim()],
            step: 1.0,
            stats: KrylovStats {
                smallest_step: f64::INFINITY,
                ..Default::default()
            },
        })
    }

    pub fn stats(&self) -> KrylovStats {
        self.stats
    }

    /// Propagate `state` forward to time `t`.
    pub fn advance(&mut self, state: &mut CIState, t: f64) -> Result<()> {
        if state.amplitudes.len() != self.h.dim() {
            return Err(Error::Domain(format!(
                "state has {} amplitudes, Hamiltonian dimension is {}",
                state.amplitudes.len(),
                self.h.dim()
            )));
        }
        if t < state.time {
            return Err(Error::Domain(format!(
                "cannot propagate backwards from {} to {t}",
                state.time
            )));
        }
        let slack = 1e-12 * t.abs().max(1.0);
        while t - state.time > slack {
            let remaining = t - state.time;
            let tau = self.krylov_step(state, remaining)?;
            state.time = if remaining - tau <= slack { t } else { state.time + tau };
        }
        state.time = t;
        Ok(())
    }

    /// One accepted step of length ≤ `limit`; returns its length.
    fn krylov_step(&mut self, state: &mut CIState, limit: f64) -> Result<f64> {
        let fail = |reason: String| Error::Propagation {
            time: state.time,
            reason,
        };
        let beta = norm(&state.amplitudes);
        if !(beta.is_finite() && beta > 0.0) {
            return Err(fail(format!("state norm is {beta}")));
        }
        let m_max = self.basis.len();
        for (v, x) in self.basis[0].iter_mut().zip(&state.amplitudes) {
            *v = x / beta;
        }
        let mut alpha = Vec::with_capacity(m_max);
        let mut offdiag: Vec<f64> = Vec::with_capacity(m_max);
        let mut residual = 0.0;
        let mut m = m_max;
        for j in 0..m_max {
            self.h.matvec(&self.basis[j], &mut self.w);
            self.stats.matvecs += 1;
            let a = inner(&self.basis[j], &self.w).re;
            alpha.push(a);
            // two rounds of Gram-Schmidt against the whole basis
            for _ in 0..2 {
                for k in 0..=j {
                    let c = inner(&self.basis[k], &self.w);
                    for (wi, vi) in self.w.iter_mut().zip(&self.basis[k]) {
                        *wi -= c * vi;
                    }
                }
            }
            let b = norm(&self.w);
            if !b.is_finite() {
                return Err(fail("non-finite Lanczos vector".into()));
            }
            let scale = a.abs() + offdiag.last().copied().unwrap_or(0.0);
            if b <= 1e-14 * scale.max(1e-300) || b == 0.0 {
                // invariant subspace: the projection is exact
                m = j + 1;
                residual = 0.0;
                break;
            }
            if j + 1 < m_max {
                offdiag.push(b);
                for (vi, wi) in self.basis[j + 1].iter_mut().zip(&self.w) {
                    *vi = wi / b;
                }
            } else {
                residual = b;
            }
        }

        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = offdiag[i];
                t[(i + 1, i)] = offdiag[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let exp_e1 = |tau: f64| -> Vec<Complex64> {
            let mut y = vec![Complex64::new(0.0, 0.0); m];
            for j in 0..m {
                let phase = Complex64::from_polar(eig.eigenvectors[(0, j)], -tau * eig.eigenvalues[j]);
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi += eig.eigenvectors[(i, j)] * phase;
                }
            }
            y
        };

        // ∫₀^τ e_mᵀ exp(−isT) e₁ ds, the residual integrated over the step
        let residual_integral = |tau: f64| -> f64 {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 0..m {
                let lam = eig.eigenvalues[j];
                let x = tau * lam;
                let weight = if x.abs() < 1e-8 {
                    Complex64::new(tau, -0.5 * tau * x)
                } else {
                    (Complex64::from_polar(1.0, -x) - 1.0) / Complex64::new(0.0, -lam)
                };
                acc += eig.eigenvectors[(m - 1, j)] * eig.eigenvectors[(0, j)] * weight;
            }
            acc.norm()
        };

        let tol = self.options.tolerance;
        let mut tau = limit.min(2.0 * self.step);
        let floor = 1e-12 * limit.max(1.0);
        let y = loop {
            let y = exp_e1(tau);
            let err = beta * residual * residual_integral(tau);
            if !err.is_finite() {
                return Err(fail("non-finite error estimate".into()));
            }
            if err <= tol {
                break y;
            }
            let shrink = (0.9 * (tol / err).powf(1.0 / m as f64)).clamp(0.1, 0.9);
            tau *= shrink;
            if tau < floor {
                return Err(fail(format!(
                    "step size collapsed below {floor:e} (error estimate {err:e})"
                )));
            }
        };

        for x in state.amplitudes.iter_mut() {
            *x = Complex64::new(0.0, 0.0);
        }
        for (k, yk) in y.iter().enumerate() {
            let c = yk * beta;
            for (x, v) in state.amplitudes.iter_mut().zip(&self.basis[k]) {
                *x += c * v;
            }
        }
        // remember how far this step could have gone for the next one
        self.step = if tau < limit { tau } else { self.step.max(tau) };
        self.stats.steps += 1;
        self.stats.smallest_step = self.stats.smallest_step.min(tau);
        Ok(tau)
    }
}

/// States at each of the ascending `times`, starting from `state`.
pub fn propagate(
    state: &CIState,
    h: &SparseHamiltonian,
    times: &[f64],
    options: KrylovOptions,
) -> Result<Vec<CIState>> {
    let mut prop = Propagator::new(h, options)?;
    let mut current = state.clone();
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        prop.advance(&mut current, t)?;
        out.push(current.clone());
    }
    Ok(out)
}

/// exp(−iHt)ψ by full diagonalization, for small bases only.
pub fn dense_propagate(h: &SparseHamiltonian, psi: &[Complex64], t: f64) -> Result<Vec<Complex64>> {
    if h.dim() > DENSE_ORACLE_LIMIT {
        return Err(Error::Domain(format!(
            "dense propagation limited to {DENSE_ORACLE_LIMIT} states, got {}",
            h.dim()
        )));
    }
    let eig = SymmetricEigen::new(h.to_dense());
    let n = h.dim();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        let overlap: Complex64 = (0..n).map(|i| psi[i] * eig.eigenvectors[(i, j)]).sum();
        let c = overlap * Complex64::from_polar(1.0, -t * eig.eigenvalues[j]);
        for (i, o) in out.iter_mut().enumerate() {
            *o += c * eig.eigenvectors[(i, j)];
        }
    }
    Ok(out)
}
