//! Sparse real-symmetric Hamiltonian in the truncated basis.
//!
//! ```text
//! H = Σ_k ε_k |k⟩⟨k| + Σ_α ω_α a†_α a_α + Σ_α ω_α λ_α Q̂_α ⊗ μ,
//! Q̂_α = (a_α + a†_α)/√(2ω_α)
//! ```
//!
//! The zero-point energy Σ ω_α/2 is left out of the diagonal and reported
//! separately.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::basis::{shifted, CIBasis};
use crate::error::{Error, Result};
use crate::model::{AtomModel, CavityModel, Mode};

/// CSR storage; every row is sorted by column.
#[derive(Clone, Debug)]
pub struct SparseHamiltonian {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    zero_point: f64,
}

/// Coupled modes of `cavity`, in basis order.
pub(crate) fn basis_modes(cavity: &CavityModel, basis: &CIBasis) -> Result<Vec<Mode>> {
    let modes: Vec<Mode> = cavity
        .coupled_modes()
        .into_iter()
        .map(|k| cavity.modes()[k])
        .collect();
    if modes.len() != basis.n_modes() {
        return Err(Error::Domain(format!(
            "basis has {} modes but the cavity couples {}",
            basis.n_modes(),
            modes.len()
        )));
    }
    Ok(modes)
}

/// Assemble H for `basis`, whose modes are the coupled modes of `cavity`.
pub fn build_hamiltonian(
    atom: &AtomModel,
    cavity: &CavityModel,
    basis: &CIBasis,
) -> Result<SparseHamiltonian> {
    if atom.levels() != basis.levels() {
        return Err(Error::Domain(format!(
            "atom has {} levels but the basis {}",
            atom.levels(),
            basis.levels()
        )));
    }
    let modes = basis_modes(cavity, basis)?;
    let dim = basis.dim();
    let levels = basis.levels();
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); dim];

    for c in 0..basis.n_configs() {
        let occ = basis.config(c);
        let photons: f64 = occ
            .iter()
            .map(|&(a, n)| n as f64 * modes[a as usize].frequency)
            .sum();
        for k in 0..levels {
            let i = basis.index(k, c);
            rows[i].push((i as u32, atom.energies()[k] + photons));
        }
        if basis.config_shell(c) == basis.total_cap() {
            continue;
        }
        // raising terms; the lowering partner is added by symmetry
        for (a, mode) in modes.iter().enumerate() {
            let Some(target) = shifted(occ, a as u32, 1) else {
                continue;
            };
            let Some(t) = basis.config_index(&target) else {
                continue;
            };
            let n = occ
                .binary_search_by_key(&(a as u32), |e| e.0)
                .map_or(0, |p| occ[p].1 as usize);
            let amp = mode.frequency * mode.coupling * ((n + 1) as f64 / (2.0 * mode.frequency)).sqrt();
            for k in 0..levels {
                for l in 0..levels {
                    let mu = atom.dipole(k, l);
                    if mu == 0.0 {
                        continue;
                    }
                    let (i, j) = (basis.index(k, c), basis.index(l, t));
                    rows[i].push((j as u32, mu * amp));
                    rows[j].push((i as u32, mu * amp));
                }
            }
        }
    }

    let mut row_ptr = Vec::with_capacity(dim + 1);
    row_ptr.push(0);
    let nnz: usize = rows.iter().map(Vec::len).sum();
    let mut cols = Vec::with_capacity(nnz);
    let mut vals = Vec::with_capacity(nnz);
    for mut row in rows {
        row.sort_unstable_by_key(|e| e.0);
        for (j, v) in row {
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(SparseHamiltonian {
        dim,
        row_ptr,
        cols,
        vals,
        zero_point: modes.iter().map(|m| 0.5 * m.frequency).sum(),
    })
}

impl SparseHamiltonian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Σ ω_α/2 over the basis modes, not included in the matrix.
    pub fn zero_point_offset(&self) -> f64 {
        self.zero_point
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[range.clone()].binary_search(&(j as u32)) {
            Ok(p) => self.vals[range.start + p],
            Err(_) => 0.0,
        }
    }

    /// y = H x
    pub fn matvec(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        y.par_chunks_mut(4096).enumerate().for_each(|(chunk, ys)| {
            let base = chunk * 4096;
            for (off, yi) in ys.iter_mut().enumerate() {
                let i = base + off;
                let mut acc = Complex64::new(0.0, 0.0);
                for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                    acc += x[self.cols[p] as usize] * self.vals[p];
                }
                *yi = acc;
            }
        });
    }

    /// ⟨x|H|x⟩ for a normalized x.
    pub fn expectation(&self, x: &[Complex64]) -> f64 {
        let mut y = vec![Complex64::new(0.0, 0.0); self.dim];
        self.matvec(x, &mut y);
        x.iter().zip(&y).map(|(a, b)| (a.conj() * b).re).sum()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[(i, self.cols[p] as usize)] = self.vals[p];
            }
        }
        out
    }

    /// max |H_ij − H_ji| over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[p] as usize;
                worst = worst.max((self.vals[p] - self.get(j, i)).abs());
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::basis::enumerate_basis;
    use crate::model::Constants;

    pub(crate) fn single_mode(frequency: f64, coupling: f64) -> CavityModel {
        let mode = Mode {
            index: 1,
            frequency,
            coupling,
        };
        CavityModel::from_modes(100.0, 50.0, vec![mode], Constants::default()).unwrap()
    }

    #[test]
    fn matrix_elements() {
        let atom = AtomModel::new(vec![-1.0, 0.5], vec![vec![0.0, 2.0], vec![2.0, 0.0]]).unwrap();
        let cav = single_mode(1.5, 0.1);
        let b = enumerate_basis(2, 1, 2, 2, 100).unwrap();
        let h = build_hamiltonian(&atom, &cav, &b).unwrap();
        assert_eq!(h.dim(), 6);
        assert_eq!(h.zero_point_offset(), 0.75);
        // |g,1⟩ diagonal
        assert!((h.get(1, 1) - (-1.0 + 1.5)).abs() < 1e-15);
        // ⟨g,0|H|e,1⟩ = μ ω λ √(1/(2ω))
        let c = 2.0 * 1.5 * 0.1 * (1.0 / 3.0f64).sqrt();
        assert!((h.get(0, 4) - c).abs() < 1e-15);
        // ⟨g,1|H|e,2⟩ carries √2
        assert!((h.get(1, 5) - c * 2f64.sqrt()).abs() < 1e-15);
        // no diagonal-in-atom coupling for a purely off-diagonal dipole
        assert_eq!(h.get(0, 1), 0.0);
        assert_eq!(h.max_asymmetry(), 0.0);
    }

    #[test]
    fn symmetric_and_matches_dense() {
        let atom = AtomModel::paper_default(3).unwrap();
        let cav = CavityModel::build(7, 500.0, 250.0, 0.05, Constants::default()).unwrap();
        let b = enumerate_basis(3, cav.coupled_modes().len(), 2, 3, 10_000).unwrap();
        let h = build_hamiltonian(&atom, &cav, &b).unwrap();
        assert_eq!(h.max_asymmetry(), 0.0);
        let dense = h.to_dense();
        let x: Vec<Complex64> = (0..h.dim())
            .map(|i| Complex64::new((i as f64).sin(), (0.3 * i as f64).cos()))
            .collect();
        let mut y = vec![Complex64::new(0.0, 0.0); h.dim()];
        h.matvec(&x, &mut y);
        for i in 0..h.dim() {
            let want: Complex64 = (0..h.dim()).map(|j| x[j] * dense[(i, j)]).sum();
            assert!((want - y[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_basis() {
        let atom = AtomModel::paper_default(2).unwrap();
        let cav = single_mode(1.0, 0.1);
        let b = enumerate_basis(2, 2, 2, 2, 100).unwrap();
        assert!(build_hamiltonian(&atom, &cav, &b).is_err());
        let b3 = enumerate_basis(3, 1, 2, 2, 100).unwrap();
        assert!(build_hamiltonian(&atom, &cav, &b3).is_err());
    }
}
