//! Normal-ordered field observables of a truncated-basis state.
//!
//! With E⁺(r) = Σ_α ζ_α(r) a_α and Ê = E⁺ + E⁻,
//!
//! ```text
//! ⟨:Ê²:⟩        = 2‖E⁺ψ‖² + 2 Re⟨ψ|E⁺E⁺ψ⟩
//! ⟨:Ê₁²Ê₂²:⟩    = Σ_{a,b=0..2} C(2,a) C(2,b) ⟨v(a,b)|v(2−a,2−b)⟩,
//! v(a,b)        = (E⁺₁)^a (E⁺₂)^b ψ
//! ```
//!
//! When no state carries more than two photons only the a + b = 2 terms
//! survive and they are evaluated from the vacuum-shell amplitudes
//! A_k[α,β] = ⟨k,0|a_α a_β|ψ⟩ through B_k = Z A_k Zᵀ, Z_iα = ζ_α(r_i):
//!
//! ```text
//! ⟨:Ê₁²Ê₂²:⟩ = Σ_k 4|B_k(1,2)|² + 2 Re(B_k(1,1)* B_k(2,2))
//! ```

use num_complex::Complex64;
use rayon::prelude::*;

use super::basis::{shifted, CIBasis};
use super::hamiltonian::basis_modes;
use super::krylov::CIState;
use crate::error::{Error, Result};
use crate::model::CavityModel;
use crate::observables::{g2_diagonal_cuts, mask_threshold, FieldSnapshot, G2Grid, ObservableRecord};
use crate::stats::Estimate;

/// Upper bound on grid² × lowering entries for the general g² evaluation.
const GENERIC_G2_BUDGET: f64 = 2e10;

/// Population of each atomic level.
pub fn populations(psi: &[Complex64], basis: &CIBasis) -> Vec<f64> {
    let n = basis.n_configs();
    (0..basis.levels())
        .map(|k| psi[k * n..(k + 1) * n].iter().map(|x| x.norm_sqr()).sum())
        .collect()
}

/// ⟨Σ_α a†_α a_α⟩.
pub fn photon_number(psi: &[Complex64], basis: &CIBasis) -> f64 {
    psi.iter()
        .enumerate()
        .map(|(i, x)| x.norm_sqr() * basis.shell(i) as f64)
        .sum()
}

/// Weight in the highest shell allowed by the total cap.
pub fn top_shell_population(psi: &[Complex64], basis: &CIBasis) -> f64 {
    psi.iter()
        .enumerate()
        .filter(|(i, _)| basis.shell(*i) == basis.total_cap())
        .map(|(_, x)| x.norm_sqr())
        .sum()
}

/// Sparse action of every a_α: for state i, the (mode, target, √n) triples.
struct Lowering {
    ptr: Vec<usize>,
    entries: Vec<(u32, u32, f64)>,
}

impl Lowering {
    fn new(basis: &CIBasis) -> Self {
        let mut ptr = Vec::with_capacity(basis.dim() + 1);
        let mut entries = Vec::new();
        ptr.push(0);
        for i in 0..basis.dim() {
            let (level, occ) = basis.occupation(i);
            for &(mode, n) in occ {
                let lowered = shifted(occ, mode, -1).expect("occupied mode");
                let target = basis
                    .index_of(level, &lowered)
                    .expect("lower shells are always in the basis");
                entries.push((mode, target as u32, (n as f64).sqrt()));
            }
            ptr.push(entries.len());
        }
        Self { ptr, entries }
    }

    /// out = E⁺ x for the field profile `zeta` (one value per basis mode).
    fn apply(&self, zeta: &[f64], x: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for (i, xi) in x.iter().enumerate() {
            if xi.re == 0.0 && xi.im == 0.0 {
                continue;
            }
            for &(mode, target, s) in &self.entries[self.ptr[i]..self.ptr[i + 1]] {
                out[target as usize] += xi * (zeta[mode as usize] * s);
            }
        }
    }
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Field observables of states in one basis on fixed grids.
pub struct ExactEvaluator<'a> {
    basis: &'a CIBasis,
    lowering: Lowering,
    r: Vec<f64>,
    g2_r: Vec<f64>,
    /// ζ over basis modes, one row per position
    zeta: Vec<Vec<f64>>,
    g2_zeta: Vec<Vec<f64>>,
    mask_fraction: f64,
}

impl<'a> ExactEvaluator<'a> {
    pub fn new(
        basis: &'a CIBasis,
        cavity: &CavityModel,
        r_grid: &[f64],
        g2_grid: &[f64],
        mask_fraction: f64,
    ) -> Result<Self> {
        let modes = basis_modes(cavity, basis)?;
        if !(mask_fraction >= 0.0 && mask_fraction.is_finite()) {
            return Err(Error::Config(format!("mask fraction must be nonnegative, got {mask_fraction}")));
        }
        let profile = |r: &f64| -> Result<Vec<f64>> {
            cavity.check_position(*r)?;
            Ok(modes.iter().map(|m| cavity.zeta(m, *r)).collect())
        };
        Ok(Self {
            basis,
            lowering: Lowering::new(basis),
            r: r_grid.to_vec(),
            g2_r: g2_grid.to_vec(),
            zeta: r_grid.iter().map(profile).collect::<Result<_>>()?,
            g2_zeta: g2_grid.iter().map(profile).collect::<Result<_>>()?,
            mask_fraction,
        })
    }

    fn check(&self, psi: &[Complex64]) -> Result<()> {
        if psi.len() != self.basis.dim() {
            return Err(Error::Domain(format!(
                "state has {} amplitudes, basis dimension is {}",
                psi.len(),
                self.basis.dim()
            )));
        }
        Ok(())
    }

    fn intensity_on(&self, zeta: &[Vec<f64>], psi: &[Complex64]) -> Vec<f64> {
        let dim = psi.len();
        zeta.par_iter()
            .map_init(
                || (vec![Complex64::new(0.0, 0.0); dim], vec![Complex64::new(0.0, 0.0); dim]),
                |(u, w), z| {
                    self.lowering.apply(z, psi, u);
                    self.lowering.apply(z, u, w);
                    let uu: f64 = u.iter().map(|x| x.norm_sqr()).sum();
                    2.0 * uu + 2.0 * inner(psi, w).re
                },
            )
            .collect()
    }

    /// ⟨:Ê²(r):⟩ on the intensity grid.
    pub fn intensity(&self, psi: &[Complex64]) -> Result<Vec<f64>> {
        self.check(psi)?;
        Ok(self.intensity_on(&self.zeta, psi))
    }

    /// ⟨:Ê²(r₁)Ê²(r₂):⟩ on the g² grid, row-major.
    pub fn g2_numerator(&self, psi: &[Complex64]) -> Result<Vec<f64>> {
        self.check(psi)?;
        if self.basis.total_cap() <= 2 {
            Ok(self.g2_numerator_two_photon(psi))
        } else {
            self.g2_numerator_general(psi)
        }
    }

    fn g2_numerator_two_photon(&self, psi: &[Complex64]) -> Vec<f64> {
        let n = self.g2_r.len();
        let modes = self.basis.n_modes();
        let mut out = vec![0.0; n * n];
        for k in 0..self.basis.levels() {
            // A_k[α,β] = ⟨k,0|a_α a_β|ψ⟩
            let mut a = vec![Complex64::new(0.0, 0.0); modes * modes];
            for alpha in 0..modes {
                for beta in alpha..modes {
                    let (occ, factor) = if alpha == beta {
                        (vec![(alpha as u32, 2u8)], std::f64::consts::SQRT_2)
                    } else {
                        (vec![(alpha as u32, 1u8), (beta as u32, 1u8)], 1.0)
                    };
                    if let Some(i) = self.basis.index_of(k, &occ) {
                        let v = psi[i] * factor;
                        a[alpha * modes + beta] = v;
                        a[beta * modes + alpha] = v;
                    }
                }
            }
            if a.iter().all(|x| x.norm_sqr() == 0.0) {
                continue;
            }
            // C = Z A, then B = C Zᵀ
            let c: Vec<Vec<Complex64>> = self
                .g2_zeta
                .par_iter()
                .map(|z| {
                    (0..modes)
                        // A is symmetric, so row β doubles as column β
                        .map(|beta| a[beta * modes..(beta + 1) * modes].iter().zip(z).map(|(x, y)| x * y).sum())
                        .collect()
                })
                .collect();
            let b: Vec<Vec<Complex64>> = c
                .par_iter()
                .map(|ci| {
                    self.g2_zeta
                        .iter()
                        .map(|zj| ci.iter().zip(zj).map(|(x, y)| x * y).sum())
                        .collect()
                })
                .collect();
            for i in 0..n {
                for j in 0..n {
                    out[i * n + j] += 4.0 * b[i][j].norm_sqr() + 2.0 * (b[i][i].conj() * b[j][j]).re;
                }
            }
        }
        out
    }

    fn g2_numerator_general(&self, psi: &[Complex64]) -> Result<Vec<f64>> {
        let n = self.g2_r.len();
        let cost = (n * n) as f64 * self.lowering.entries.len() as f64;
        if cost > GENERIC_G2_BUDGET {
            return Err(Error::Domain(format!(
                "g2 evaluation with total cap {} on {n} points is too expensive; \
                 use total cap 2 or a coarser g2 grid",
                self.basis.total_cap()
            )));
        }
        let dim = psi.len();
        let zero = || vec![Complex64::new(0.0, 0.0); dim];
        // (E⁺_j)^b ψ for b = 1, 2 at every grid point
        let powers: Vec<[Vec<Complex64>; 2]> = self
            .g2_zeta
            .par_iter()
            .map(|z| {
                let mut one = zero();
                let mut two = zero();
                self.lowering.apply(z, psi, &mut one);
                self.lowering.apply(z, &one, &mut two);
                [one, two]
            })
            .collect();
        let binom = [1.0, 2.0, 1.0];
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let zi = &self.g2_zeta[i];
                let mut t1 = zero();
                let mut t2 = zero();
                let mut row = Vec::with_capacity(n - i);
                for j in i..n {
                    // v[a][b] = (E⁺_i)^a (E⁺_j)^b ψ
                    let mut v: [[Vec<Complex64>; 3]; 3] = Default::default();
                    for b in 0..3 {
                        let base: &[Complex64] = if b == 0 { psi } else { &powers[j][b - 1] };
                        v[0][b] = base.to_vec();
                        self.lowering.apply(zi, base, &mut t1);
                        self.lowering.apply(zi, &t1, &mut t2);
                        v[1][b] = t1.clone();
                        v[2][b] = t2.clone();
                    }
                    let mut g = 0.0;
                    for a in 0..3 {
                        for b in 0..3 {
                            g += binom[a] * binom[b] * inner(&v[a][b], &v[2 - a][2 - b]).re;
                        }
                    }
                    row.push((j, g));
                }
                row
            })
            .collect();
        let mut out = vec![0.0; n * n];
        for (i, row) in rows.into_iter().enumerate() {
            for (j, g) in row {
                out[i * n + j] = g;
                out[j * n + i] = g;
            }
        }
        Ok(out)
    }

    /// Intensity profile and g² grid at one time.
    pub fn snapshot(&self, psi: &[Complex64], time: f64) -> Result<FieldSnapshot> {
        let intensity = self.intensity(psi)?;
        let fine: Vec<Estimate> = intensity.iter().copied().map(Estimate::exact).collect();
        let threshold = mask_threshold(&fine, self.mask_fraction);
        let coarse = self.intensity_on(&self.g2_zeta, psi);
        let numerator = self.g2_numerator(psi)?;
        Ok(FieldSnapshot {
            time,
            r: self.r.clone(),
            intensity: fine,
            g2: G2Grid::from_exact(self.g2_r.clone(), numerator, coarse, threshold),
        })
    }
}

/// All observables of `state` on the given grids.
pub fn exact_observables(
    state: &CIState,
    basis: &CIBasis,
    cavity: &CavityModel,
    r_grid: &[f64],
    g2_grid: &[f64],
    mask_fraction: f64,
) -> Result<ObservableRecord> {
    let eval = ExactEvaluator::new(basis, cavity, r_grid, g2_grid, mask_fraction)?;
    let snap = eval.snapshot(&state.amplitudes, state.time)?;
    let psi = &state.amplitudes;
    Ok(ObservableRecord {
        time: state.time,
        populations: populations(psi, basis).into_iter().map(Estimate::exact).collect(),
        photon_number: Estimate::exact(photon_number(psi, basis)),
        diagonal: if snap.g2.n() >= 2 {
            g2_diagonal_cuts(&snap.g2)?
        } else {
            crate::observables::DiagonalCuts {
                s: vec![],
                plus: vec![],
                minus: vec![],
            }
        },
        r: snap.r,
        intensity: snap.intensity,
        g2: snap.g2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::basis::enumerate_basis;
    use crate::model::Constants;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cavity(modes: usize) -> CavityModel {
        CavityModel::build(modes, 40.0, 17.0, 0.02, Constants::default()).unwrap()
    }

    fn random_state(dim: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut psi: Vec<Complex64> = (0..dim)
            .map(|_| Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5))
            .collect();
        let n = psi.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        psi.iter_mut().for_each(|x| *x /= n);
        psi
    }

    /// E⁺(r) as a dense matrix on the basis.
    fn dense_lowering(basis: &CIBasis, cav: &CavityModel, r: f64) -> DMatrix<f64> {
        let modes = basis_modes(cav, basis).unwrap();
        let mut m = DMatrix::zeros(basis.dim(), basis.dim());
        for i in 0..basis.dim() {
            let (level, occ) = basis.occupation(i);
            for &(a, n) in occ {
                let j = basis.index_of(level, &shifted(occ, a, -1).unwrap()).unwrap();
                m[(j, i)] += cav.zeta(&modes[a as usize], r) * (n as f64).sqrt();
            }
        }
        m
    }

    fn expectation(psi: &[Complex64], m: &DMatrix<f64>) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..psi.len() {
            for j in 0..psi.len() {
                acc += psi[i].conj() * m[(i, j)] * psi[j];
            }
        }
        acc.re
    }

    /// Normal-ordered product of the fields at `points`, all sign choices expanded.
    fn normal_ordered(fields: &[DMatrix<f64>]) -> DMatrix<f64> {
        let dim = fields[0].nrows();
        let mut total = DMatrix::<f64>::zeros(dim, dim);
        for mask in 0..(1usize << fields.len()) {
            let mut creators = DMatrix::<f64>::identity(dim, dim);
            let mut annihilators = DMatrix::<f64>::identity(dim, dim);
            for (k, f) in fields.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    creators *= f.transpose();
                } else {
                    annihilators *= f;
                }
            }
            total += creators * annihilators;
        }
        total
    }

    fn check_against_operators(per_mode_cap: u32, total_cap: u32, general: bool) {
        let cav = cavity(5);
        let modes = cav.coupled_modes().len();
        let basis = enumerate_basis(2, modes, per_mode_cap, total_cap, 10_000).unwrap();
        let grid = [3.0, 11.5, 20.0, 31.0];
        let eval = ExactEvaluator::new(&basis, &cav, &grid, &grid, 1e-3).unwrap();
        let psi = random_state(basis.dim(), 9 + total_cap as u64);
        let fields: Vec<DMatrix<f64>> = grid.iter().map(|&r| dense_lowering(&basis, &cav, r)).collect();
        let intensity = eval.intensity(&psi).unwrap();
        let numerator = if general {
            eval.g2_numerator_general(&psi).unwrap()
        } else {
            eval.g2_numerator(&psi).unwrap()
        };
        let n = grid.len();
        for i in 0..n {
            let want = expectation(&psi, &normal_ordered(&[fields[i].clone(), fields[i].clone()]));
            assert!((intensity[i] - want).abs() < 1e-12 * want.abs().max(1.0), "{} vs {want}", intensity[i]);
            for j in 0..n {
                let op = normal_ordered(&[
                    fields[i].clone(),
                    fields[i].clone(),
                    fields[j].clone(),
                    fields[j].clone(),
                ]);
                let want = expectation(&psi, &op);
                assert!((numerator[i * n + j] - want).abs() < 1e-12 * want.abs().max(1.0), "({i},{j}) {} vs {want}", numerator[i * n + j]);
            }
        }
    }

    #[test]
    fn two_photon_path_matches_operator_algebra() {
        check_against_operators(2, 2, false);
        check_against_operators(1, 2, false);
    }

    #[test]
    fn general_path_matches_operator_algebra() {
        check_against_operators(2, 2, true);
        check_against_operators(3, 4, true);
    }

    #[test]
    fn vacuum_has_no_field() {
        let cav = cavity(6);
        let basis = enumerate_basis(2, cav.coupled_modes().len(), 2, 2, 1000).unwrap();
        let state = CIState::excited(&basis, 0).unwrap();
        let grid = cav.uniform_grid(9);
        let rec = exact_observables(&state, &basis, &cav, &grid, &grid, 1e-3).unwrap();
        assert_eq!(rec.photon_number.mean, 0.0);
        assert!(rec.intensity.iter().all(|e| e.mean == 0.0));
        assert!(rec.g2.numerator.iter().all(|e| e.mean == 0.0));
        assert!(rec.g2.values.iter().all(Option::is_none));
        assert_eq!(rec.populations[0].mean, 1.0);
    }

    #[test]
    fn single_photon_antibunching() {
        let cav = cavity(3);
        let basis = enumerate_basis(2, cav.coupled_modes().len(), 2, 2, 1000).unwrap();
        let one = basis.index_of(0, &[(0, 1)]).unwrap();
        let mut state = CIState::basis_state(basis.dim(), one).unwrap();
        state.time = 5.0;
        let grid = [7.0, 13.0];
        let rec = exact_observables(&state, &basis, &cav, &grid, &grid, 1e-3).unwrap();
        let zeta = cav.mode_function(1, 7.0).unwrap();
        assert!((rec.intensity[0].mean - 2.0 * zeta * zeta).abs() < 1e-15);
        assert_eq!(rec.photon_number.mean, 1.0);
        for i in 0..2 {
            assert_eq!(rec.g2.value(i, i), Some(0.0));
        }
        assert_eq!(rec.time, 5.0);
        // two photons in one mode: 6⟨a†²a²⟩ / (2⟨a†a⟩)² = 12/16
        let two = basis.index_of(0, &[(0, 2)]).unwrap();
        let state = CIState::basis_state(basis.dim(), two).unwrap();
        let rec = exact_observables(&state, &basis, &cav, &grid, &grid, 1e-3).unwrap();
        assert!((rec.g2.value(0, 1).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn counting_observables() {
        let cav = cavity(4);
        let basis = enumerate_basis(3, cav.coupled_modes().len(), 2, 2, 1000).unwrap();
        let psi = random_state(basis.dim(), 4);
        let pops = populations(&psi, &basis);
        assert!((pops.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        let n: f64 = (0..basis.dim())
            .map(|i| psi[i].norm_sqr() * basis.dense_occupation(i).iter().sum::<u32>() as f64)
            .sum();
        assert!((photon_number(&psi, &basis) - n).abs() < 1e-14);
        let top: f64 = (0..basis.dim())
            .filter(|&i| basis.shell(i) == 2)
            .map(|i| psi[i].norm_sqr())
            .sum();
        assert_eq!(top_shell_population(&psi, &basis), top);
    }
}
