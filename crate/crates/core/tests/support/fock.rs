//! Brute-force Fock-space operators for few-mode Gaussian test states, and
//! exact Gaussian expectations of phase-space estimators.
#![allow(dead_code)]

use mtef_core::model::{CavityModel, Constants, Mode};
use mtef_core::sampling::PhasePoint;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C;

/// Gaussian state given by its first and second normal-ordered moments:
/// ⟨a_i⟩, ⟨Δa_i Δa_j⟩ and ⟨Δa_i† Δa_j⟩.
#[derive(Clone, Debug)]
pub struct GaussianMoments {
    pub mean: Vec<C>,
    pub anomalous: DMatrix<C>,
    pub number: DMatrix<C>,
}

/// A truncated Fock-space state with every mode capped at `cap` quanta.
#[derive(Clone, Debug)]
pub struct FockState {
    pub modes: usize,
    pub cap: usize,
    pub psi: DVector<C>,
}

fn index(occ: &[usize], cap: usize) -> usize {
    occ.iter().fold(0, |acc, &n| acc * (cap + 1) + n)
}

fn occupations(i: usize, modes: usize, cap: usize) -> Vec<usize> {
    let mut out = vec![0; modes];
    let mut rest = i;
    for m in (0..modes).rev() {
        out[m] = rest % (cap + 1);
        rest /= cap + 1;
    }
    out
}

/// Dense annihilation operator of `mode` on a capped product space.
pub fn lowering(modes: usize, cap: usize, mode: usize) -> DMatrix<C> {
    let dim = (cap + 1).pow(modes as u32);
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        let mut occ = occupations(i, modes, cap);
        let n = occ[mode];
        if n > 0 {
            occ[mode] -= 1;
            a[(index(&occ, cap), i)] = C::new((n as f64).sqrt(), 0.0);
        }
    }
    a
}

/// exp(G) v by Taylor series; G must have modest norm on v.
fn exp_apply(g: &DMatrix<C>, v: &DVector<C>) -> DVector<C> {
    let mut out = v.clone();
    let mut term = v.clone();
    for k in 1..400 {
        term = g * term / C::new(k as f64, 0.0);
        out += &term;
        if term.norm() < 1e-20 {
            return out;
        }
    }
    panic!("Taylor series did not converge");
}

/// Build D(α)·S(ξ)|0⟩ per mode, optionally followed by a two-mode squeezer
/// (modes 0 and 1), in a large space and truncate to `cap`.
pub fn gaussian_state(
    displacement: &[C],
    squeeze: &[C],
    two_mode_squeeze: C,
    cap: usize,
) -> (FockState, GaussianMoments) {
    let modes = displacement.len();
    let big = if modes == 1 { 60 } else { 24 };
    let dim = (big + 1usize).pow(modes as u32);
    let a: Vec<DMatrix<C>> = (0..modes).map(|m| lowering(modes, big, m)).collect();
    let mut psi = DVector::zeros(dim);
    psi[0] = C::new(1.0, 0.0);
    // two-mode squeeze first, then single-mode squeezes, then displacements
    if modes == 2 && two_mode_squeeze != C::new(0.0, 0.0) {
        let g = (&a[0] * &a[1]) * two_mode_squeeze.conj()
            - (a[0].adjoint() * a[1].adjoint()) * two_mode_squeeze;
        psi = exp_apply(&g, &psi);
    }
    for m in 0..modes {
        let xi = squeeze[m];
        if xi != C::new(0.0, 0.0) {
            let g = ((&a[m] * &a[m]) * xi.conj() - (a[m].adjoint() * a[m].adjoint()) * xi) * C::new(0.5, 0.0);
            psi = exp_apply(&g, &psi);
        }
    }
    for m in 0..modes {
        let al = displacement[m];
        if al != C::new(0.0, 0.0) {
            let g = a[m].adjoint() * al - &a[m] * al.conj();
            psi = exp_apply(&g, &psi);
        }
    }
    // truncate
    let small = (cap + 1).pow(modes as u32);
    let mut out = DVector::zeros(small);
    for i in 0..dim {
        let occ = occupations(i, modes, big);
        if occ.iter().all(|&n| n <= cap) {
            out[index(&occ, cap)] = psi[i];
        }
    }
    let norm = out.norm();
    out /= C::new(norm, 0.0);

    // closed-form moments; displacements leave the centered ones unchanged
    let tm_r = two_mode_squeeze.norm();
    assert!(
        tm_r == 0.0 || squeeze.iter().all(|s| s.norm() == 0.0),
        "single- and two-mode squeezing are not combined"
    );
    let mut anomalous = DMatrix::zeros(modes, modes);
    let mut number = DMatrix::zeros(modes, modes);
    for m in 0..modes {
        let r = squeeze[m].norm();
        if r > 0.0 {
            anomalous[(m, m)] = -(squeeze[m] / r) * r.cosh() * r.sinh();
            number[(m, m)] = C::new(r.sinh().powi(2), 0.0);
        }
    }
    if tm_r > 0.0 {
        let t = -(two_mode_squeeze / tm_r) * tm_r.cosh() * tm_r.sinh();
        anomalous[(0, 1)] = t;
        anomalous[(1, 0)] = t;
        number[(0, 0)] = C::new(tm_r.sinh().powi(2), 0.0);
        number[(1, 1)] = number[(0, 0)];
    }
    (
        FockState { modes, cap, psi: out },
        GaussianMoments {
            mean: displacement.to_vec(),
            anomalous,
            number,
        },
    )
}

/// Symmetric-ordered mean and covariance of (Q_1..Q_d, P_1..P_d).
pub fn wigner_moments(m: &GaussianMoments, frequencies: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let d = frequencies.len();
    // z = (a, a†) and x = T z
    let mut t = DMatrix::<C>::zeros(2 * d, 2 * d);
    for i in 0..d {
        let w = frequencies[i];
        let sq = 1.0 / (2.0 * w).sqrt();
        t[(i, i)] = C::new(sq, 0.0);
        t[(i, d + i)] = C::new(sq, 0.0);
        let sp = (w / 2.0).sqrt();
        t[(d + i, i)] = C::new(0.0, -sp);
        t[(d + i, d + i)] = C::new(0.0, sp);
    }
    let mut s = DMatrix::<C>::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            let delta = if i == j { 0.5 } else { 0.0 };
            s[(i, j)] = m.anomalous[(i, j)];
            s[(d + i, d + j)] = m.anomalous[(i, j)].conj();
            s[(i, d + j)] = m.number[(j, i)] + delta;
            s[(d + i, j)] = m.number[(i, j)] + delta;
        }
    }
    let cov = &t * s * t.transpose();
    let mut z = DVector::<C>::zeros(2 * d);
    for i in 0..d {
        z[i] = m.mean[i];
        z[d + i] = m.mean[i].conj();
    }
    let mean = &t * z;
    for v in cov.iter().chain(mean.iter()) {
        assert!(v.im.abs() < 1e-12, "moments must be real");
    }
    (mean.iter().map(|c| c.re).collect(), cov.map(|c| c.re))
}

/// Nodes and weights of a Gaussian with the given mean and covariance that
/// integrate every polynomial of degree ≤ 5 exactly (tensor three-point
/// Gauss-Hermite in whitened coordinates).
pub fn cubature(mean: &[f64], cov: &DMatrix<f64>) -> Vec<(f64, Vec<f64>)> {
    let n = mean.len();
    let eig = nalgebra::SymmetricEigen::new(cov.clone());
    let root: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let z = [-(3f64.sqrt()), 0.0, 3f64.sqrt()];
    let w = [1.0 / 6.0, 2.0 / 3.0, 1.0 / 6.0];
    let mut out = Vec::with_capacity(3usize.pow(n as u32));
    for code in 0..3usize.pow(n as u32) {
        let mut weight = 1.0;
        let mut x = mean.to_vec();
        let mut c = code;
        for k in 0..n {
            let pick = c % 3;
            c /= 3;
            weight *= w[pick];
            for i in 0..n {
                x[i] += eig.eigenvectors[(i, k)] * root[k] * z[pick];
            }
        }
        out.push((weight, x));
    }
    out
}

/// Phase points (with weights) for a Gaussian Wigner function.
pub fn phase_points(m: &GaussianMoments, frequencies: &[f64]) -> Vec<(f64, PhasePoint)> {
    let d = frequencies.len();
    let (mean, cov) = wigner_moments(m, frequencies);
    cubature(&mean, &cov)
        .into_iter()
        .map(|(w, x)| {
            (
                w,
                PhasePoint {
                    q: x[..d].to_vec(),
                    p: x[d..].to_vec(),
                },
            )
        })
        .collect()
}

/// Cavity whose modes have the given frequencies and mode indices.
pub fn test_cavity(frequencies: &[f64], indices: &[usize]) -> CavityModel {
    let modes = frequencies
        .iter()
        .zip(indices)
        .map(|(&frequency, &index)| Mode {
            index,
            frequency,
            coupling: 0.0,
        })
        .collect();
    CavityModel::from_modes(30.0, 15.0, modes, Constants::default()).unwrap()
}

/// Fock-space field observables for `state` in `cavity`.
pub struct FockOracle {
    e_plus: Vec<DMatrix<C>>,
    a: Vec<DMatrix<C>>,
    psi: DVector<C>,
}

impl FockOracle {
    pub fn new(state: &FockState, cavity: &CavityModel, points: &[f64]) -> Self {
        let a: Vec<DMatrix<C>> = (0..state.modes).map(|m| lowering(state.modes, state.cap, m)).collect();
        let e_plus = points
            .iter()
            .map(|&r| {
                let mut e = DMatrix::zeros(a[0].nrows(), a[0].ncols());
                for (m, am) in a.iter().enumerate() {
                    e += am * C::new(cavity.mode_function(m + 1, r).unwrap(), 0.0);
                }
                e
            })
            .collect();
        Self {
            e_plus,
            a,
            psi: state.psi.clone(),
        }
    }

    fn expect(&self, op: &DMatrix<C>) -> C {
        (self.psi.adjoint() * op * &self.psi)[(0, 0)]
    }

    /// Normal-ordered product of the real fields at the given point indices.
    fn normal_ordered(&self, points: &[usize]) -> f64 {
        let dim = self.psi.len();
        let mut total = C::new(0.0, 0.0);
        for mask in 0..(1usize << points.len()) {
            let mut creators = DMatrix::<C>::identity(dim, dim);
            let mut annihilators = DMatrix::<C>::identity(dim, dim);
            for (k, &p) in points.iter().enumerate() {
                if mask >> k & 1 == 1 {
                    creators *= self.e_plus[p].adjoint();
                } else {
                    annihilators *= &self.e_plus[p];
                }
            }
            total += self.expect(&(creators * annihilators));
        }
        assert!(total.im.abs() < 1e-10 * total.re.abs().max(1e-6));
        total.re
    }

    pub fn photon_number(&self) -> f64 {
        self.a.iter().map(|a| self.expect(&(a.adjoint() * a)).re).sum()
    }

    pub fn intensity(&self, i: usize) -> f64 {
        self.normal_ordered(&[i, i])
    }

    pub fn g2_numerator(&self, i: usize, j: usize) -> f64 {
        self.normal_ordered(&[i, i, j, j])
    }
}
