//! Normal-ordered field observables and the records shared by both solvers.
//!
//! The Weyl symbol of a polynomial in Q̂ is the same polynomial in the phase
//! space coordinate Q, so in the trajectory picture every normal-ordered
//! observable is a polynomial in (Q, P) minus its vacuum contractions. With
//! e(r) = Σ_α √(2ω_α) ζ_α(r) Q_α and the vacuum correlation
//! C(r, r') = Σ_α ζ_α(r) ζ_α(r'):
//!
//! ```text
//! :N:          = ½ Σ_α (P_α²/ω_α + ω_α Q_α² − 1)
//! :I(r):       = e(r)² − C(r, r)
//! :G²(r1, r2): = e1² e2² − C11 e2² − C22 e1² − 4 C12 e1 e2 + C11 C22 + 2 C12²
//! ```
//!
//! The G² expression is the full normal-ordered product of four fields. The
//! [`G2Variant::Paper`] estimator keeps only the mode-diagonal parts of the
//! field products and drops the constant, and [`IntensityVariant::Diagonal`]
//! likewise drops the mode cross terms of the intensity.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::CavityModel;
use crate::sampling::PhasePoint;
use crate::stats::Estimate;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum IntensityVariant {
    /// Full double sum over modes.
    #[default]
    Full,
    /// Mode-diagonal terms only.
    Diagonal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum G2Variant {
    /// Complete normal-ordered expansion including cross-mode products.
    #[default]
    Full,
    /// Mode-diagonal quartic term and single-mode quadratic correction only.
    Paper,
}

impl IntensityVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Diagonal => "diagonal",
        }
    }
}

impl G2Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Paper => "paper",
        }
    }
}

impl fmt::Display for IntensityVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for G2Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IntensityVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "diagonal" => Ok(Self::Diagonal),
            other => Err(Error::Config(format!(
                "unknown intensity variant '{other}' (expected 'full' or 'diagonal')"
            ))),
        }
    }
}

impl FromStr for G2Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "paper" => Ok(Self::Paper),
            other => Err(Error::Config(format!(
                "unknown g2 variant '{other}' (expected 'full' or 'paper')"
            ))),
        }
    }
}

/// Default g² mask: cells where either intensity is below this fraction of the
/// snapshot's peak mean intensity are masked.
pub const DEFAULT_MASK_FRACTION: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorOptions {
    pub intensity: IntensityVariant,
    pub g2: G2Variant,
    pub mask_fraction: f64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            intensity: IntensityVariant::Full,
            g2: G2Variant::Full,
            mask_fraction: DEFAULT_MASK_FRACTION,
        }
    }
}

/// Dot product with four independent partial sums (fixed order).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Position of (i, j) in a row-major packed upper triangle of an n×n
/// symmetric matrix.
pub fn packed_index(n: usize, i: usize, j: usize) -> usize {
    let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
    lo * n - lo * lo.saturating_sub(1) / 2 + hi - lo
}

/// Per-trajectory normal-ordered photon number estimator.
pub fn photon_number(point: &PhasePoint, cavity: &CavityModel) -> f64 {
    let mut n = 0.0;
    for (k, mode) in cavity.modes().iter().enumerate() {
        let w = mode.frequency;
        n += point.p[k] * point.p[k] / w + w * point.q[k] * point.q[k] - 1.0;
    }
    0.5 * n
}

/// Mode functions and vacuum correlations tabulated on a spatial grid.
#[derive(Clone, Debug)]
pub struct FieldEvaluator {
    points: Vec<f64>,
    n_modes: usize,
    /// ζ_α(r_i), row-major points × modes
    zeta: Vec<f64>,
    /// √(2ω_α)
    scale: Vec<f64>,
    frequency: Vec<f64>,
    /// C(r_i, r_i)
    vacuum: Vec<f64>,
}

impl FieldEvaluator {
    pub fn new(cavity: &CavityModel, points: &[f64]) -> Result<Self> {
        for &r in points {
            cavity.check_position(r)?;
        }
        let n_modes = cavity.n_modes();
        let mut zeta = Vec::with_capacity(points.len() * n_modes);
        for &r in points {
            for mode in cavity.modes() {
                zeta.push(cavity.zeta(mode, r));
            }
        }
        let frequency: Vec<f64> = cavity.frequencies().collect();
        let scale = frequency.iter().map(|w| (2.0 * w).sqrt()).collect();
        let mut out = Self {
            points: points.to_vec(),
            n_modes,
            zeta,
            scale,
            frequency,
            vacuum: Vec::new(),
        };
        out.vacuum = (0..points.len()).map(|i| out.vacuum_cross(i, i)).collect();
        Ok(out)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.zeta[i * self.n_modes..(i + 1) * self.n_modes]
    }

    /// Vacuum correlation C(r_i, r_j) = Σ_α ζ_α(r_i) ζ_α(r_j).
    pub fn vacuum_cross(&self, i: usize, j: usize) -> f64 {
        dot(self.row(i), self.row(j))
    }

    pub fn vacuum(&self) -> &[f64] {
        &self.vacuum
    }

    /// Classical field e(r_i) = Σ_α √(2ω_α) ζ_α(r_i) Q_α on every grid point.
    pub fn field(&self, q: &[f64], out: &mut [f64]) {
        let x: Vec<f64> = q.iter().zip(&self.scale).map(|(q, s)| q * s).collect();
        for (i, o) in out.iter_mut().enumerate() {
            *o = dot(self.row(i), &x);
        }
    }

    /// 2ω_α Q_α², the per-mode weight of the diagonal estimators.
    fn diagonal_weights(&self, q: &[f64]) -> Vec<f64> {
        q.iter()
            .zip(&self.frequency)
            .map(|(q, w)| 2.0 * w * q * q)
            .collect()
    }

    fn diagonal_sum(&self, i: usize, v: &[f64]) -> f64 {
        self.row(i).iter().zip(v).map(|(z, v)| z * z * v).sum()
    }

    /// Per-trajectory normal-ordered intensity on the grid.
    pub fn intensity(&self, q: &[f64], variant: IntensityVariant, out: &mut [f64]) {
        match variant {
            IntensityVariant::Full => {
                self.field(q, out);
                for (o, c) in out.iter_mut().zip(&self.vacuum) {
                    *o = *o * *o - c;
                }
            }
            IntensityVariant::Diagonal => {
                let v = self.diagonal_weights(q);
                for (i, o) in out.iter_mut().enumerate() {
                    *o = self.diagonal_sum(i, &v) - self.vacuum[i];
                }
            }
        }
    }

    /// Per-trajectory G² numerators on the upper triangle (i ≤ j, row-major)
    /// of the grid. `field` must hold e(r_i) for the `Full` variant and
    /// `cross` the vacuum correlations in the same packed order.
    pub fn g2_numerators(
        &self,
        q: &[f64],
        variant: G2Variant,
        field: &[f64],
        cross: &[f64],
        out: &mut [f64],
    ) {
        let n = self.len();
        let c = &self.vacuum;
        match variant {
            G2Variant::Full => {
                let mut k = 0;
                for i in 0..n {
                    let ei = field[i];
                    let ei2 = ei * ei;
                    for j in i..n {
                        let ej = field[j];
                        let ej2 = ej * ej;
                        let cij = cross[k];
                        out[k] = ei2 * ej2 - c[i] * ej2 - c[j] * ei2 - 4.0 * cij * ei * ej
                            + c[i] * c[j]
                            + 2.0 * cij * cij;
                        k += 1;
                    }
                }
            }
            G2Variant::Paper => {
                let v = self.diagonal_weights(q);
                let u: Vec<f64> = v.iter().map(|v| v * v).collect();
                let diag: Vec<f64> = (0..n).map(|i| self.diagonal_sum(i, &v)).collect();
                let mut k = 0;
                for i in 0..n {
                    let zi = self.row(i);
                    let zi2u: Vec<f64> = zi.iter().zip(&u).map(|(z, u)| z * z * u).collect();
                    let ziv: Vec<f64> = zi.iter().zip(&v).map(|(z, v)| z * v).collect();
                    for j in i..n {
                        let zj = self.row(j);
                        let mut quartic = 0.0;
                        let mut mixed = 0.0;
                        for a in 0..self.n_modes {
                            quartic += zi2u[a] * zj[a] * zj[a];
                            mixed += ziv[a] * zj[a];
                        }
                        out[k] = quartic - 4.0 * cross[k] * mixed - c[j] * diag[i] - c[i] * diag[j];
                        k += 1;
                    }
                }
            }
        }
    }

    /// Vacuum correlations C(r_i, r_j) packed like [`Self::g2_numerators`].
    pub fn packed_cross(&self) -> Vec<f64> {
        let n = self.len();
        let mut out = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                out.push(self.vacuum_cross(i, j));
            }
        }
        out
    }
}

/// Per-trajectory normal-ordered intensity profile.
pub fn intensity(
    point: &PhasePoint,
    cavity: &CavityModel,
    r_grid: &[f64],
    variant: IntensityVariant,
) -> Result<Vec<f64>> {
    let eval = FieldEvaluator::new(cavity, r_grid)?;
    let mut out = vec![0.0; r_grid.len()];
    eval.intensity(&point.q, variant, &mut out);
    Ok(out)
}

/// Per-trajectory G² estimator at (r1, r2).
pub fn g2_numerator(
    point: &PhasePoint,
    cavity: &CavityModel,
    r1: f64,
    r2: f64,
    variant: G2Variant,
) -> Result<f64> {
    let eval = FieldEvaluator::new(cavity, &[r1, r2])?;
    let mut field = [0.0; 2];
    eval.field(&point.q, &mut field);
    let cross = eval.packed_cross();
    let mut out = [0.0; 3];
    eval.g2_numerators(&point.q, variant, &field, &cross, &mut out);
    Ok(out[1])
}

/// Normalized correlation, or `None` where either intensity is below the
/// threshold (including the 0/0 of the undisturbed vacuum).
pub fn g2(numerator: f64, i1: f64, i2: f64, threshold: f64) -> Option<f64> {
    if !(i1 >= threshold && i2 >= threshold) || i1 <= 0.0 || i2 <= 0.0 {
        return None;
    }
    let value = numerator / (i1 * i2);
    value.is_finite().then_some(value)
}

/// Masking threshold for a snapshot.
pub fn mask_threshold(intensity: &[Estimate], fraction: f64) -> f64 {
    let peak = intensity
        .iter()
        .map(|e| e.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    if peak > 0.0 {
        fraction * peak
    } else {
        f64::INFINITY
    }
}

/// g²(r1, r2) on a square grid with its numerator and intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct G2Grid {
    pub r: Vec<f64>,
    /// ⟨:G²:⟩, row-major n×n
    pub numerator: Vec<Estimate>,
    /// ⟨:I:⟩ on the same grid
    pub intensity: Vec<Estimate>,
    /// g², `None` where masked
    pub values: Vec<Option<Estimate>>,
    pub threshold: f64,
}

impl G2Grid {
    pub fn n(&self) -> usize {
        self.r.len()
    }

    pub fn get(&self, i: usize, j: usize) -> Option<Estimate> {
        self.values[i * self.n() + j]
    }

    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        self.get(i, j).map(|e| e.mean)
    }

    /// Grid from exact (error-free) means.
    pub fn from_exact(r: Vec<f64>, numerator: Vec<f64>, intensity: Vec<f64>, threshold: f64) -> Self {
        let n = r.len();
        let values = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                g2(numerator[k], intensity[i], intensity[j], threshold).map(Estimate::exact)
            })
            .collect();
        Self {
            r,
            numerator: numerator.into_iter().map(Estimate::exact).collect(),
            intensity: intensity.into_iter().map(Estimate::exact).collect(),
            values,
            threshold,
        }
    }
}

/// g² profiles along the diagonal r1 = r2 (`plus`) and along the
/// anti-diagonal through the same center (`minus`), indexed by the signed
/// offset `s` from the center along each axis.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalCuts {
    pub s: Vec<f64>,
    pub plus: Vec<Option<Estimate>>,
    pub minus: Vec<Option<Estimate>>,
}

impl DiagonalCuts {
    /// Mean |g²₊(s) − g²₋(s)| over offsets where both cuts are unmasked.
    pub fn asymmetry(&self) -> Option<f64> {
        let diffs: Vec<f64> = self
            .plus
            .iter()
            .zip(&self.minus)
            .filter_map(|(p, m)| Some((p.as_ref()?.mean - m.as_ref()?.mean).abs()))
            .collect();
        (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64)
    }
}

/// Cuts through the cavity center: r₊ = (r1 + r2)/√2 along r1 = r2 and
/// r₋ = (r1 − r2)/√2 along r1 + r2 = L.
pub fn g2_diagonal_cuts(grid: &G2Grid) -> Result<DiagonalCuts> {
    let n = grid.n();
    if grid.values.len() != n * n {
        return Err(Error::Domain("g2 grid is not square".into()));
    }
    if n == 0 {
        return Ok(DiagonalCuts { s: vec![], plus: vec![], minus: vec![] });
    }
    cuts_about(grid, n - 1)
}

/// Cuts through the diagonal point with index sum `k_sum` (= 2c for the cell
/// (c, c)); the anti-diagonal cut runs over cells (i, k_sum − i).
pub fn cuts_about(grid: &G2Grid, k_sum: usize) -> Result<DiagonalCuts> {
    let n = grid.n();
    if n < 2 || k_sum > 2 * (n - 1) {
        return Err(Error::Domain(format!("cut center {k_sum} outside grid of {n} points")));
    }
    let spacing = (grid.r[n - 1] - grid.r[0]) / (n - 1) as f64;
    let lo = k_sum.saturating_sub(n - 1);
    let hi = k_sum.min(n - 1);
    let mut s = Vec::new();
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    // (i, k − i) and (i, i) sit at the same signed distance from the center
    for i in lo..=hi {
        let offset = i as f64 - k_sum as f64 / 2.0;
        s.push(std::f64::consts::SQRT_2 * offset * spacing);
        minus.push(grid.get(i, k_sum - i));
        plus.push(grid.get(i, i));
    }
    Ok(DiagonalCuts { s, plus, minus })
}

/// Atomic populations from per-trajectory (weight, populations) pairs.
pub fn atomic_populations<'a, I>(ensemble: I) -> Result<Vec<Estimate>>
where
    I: IntoIterator<Item = (f64, &'a [f64])>,
{
    let mut moments: Option<crate::stats::Moments> = None;
    let mut totals = crate::stats::WeightTotals::default();
    for (w, pops) in ensemble {
        let m = moments.get_or_insert_with(|| crate::stats::Moments::new(pops.len()));
        if m.len() != pops.len() {
            return Err(Error::Domain("inconsistent number of atomic levels".into()));
        }
        m.add(w, pops);
        totals.add(w);
    }
    match moments {
        Some(m) => Ok(m.estimates(&totals)),
        None => Err(Error::Domain("empty ensemble".into())),
    }
}

/// Time series entry: atomic populations and photon number.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesPoint {
    pub time: f64,
    pub populations: Vec<Estimate>,
    pub photon_number: Estimate,
}

/// Spatially resolved observables at one snapshot time.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSnapshot {
    pub time: f64,
    pub r: Vec<f64>,
    pub intensity: Vec<Estimate>,
    pub g2: G2Grid,
}

/// Everything a solver run reports.
#[derive(Clone, Debug, PartialEq)]
pub struct RunObservables {
    pub series: Vec<SeriesPoint>,
    pub snapshots: Vec<FieldSnapshot>,
    /// trajectories excluded after divergence (always 0 for the exact solver)
    pub flagged: usize,
    pub accepted: usize,
}

/// Combined observables at one snapshot time.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservableRecord {
    pub time: f64,
    pub populations: Vec<Estimate>,
    pub photon_number: Estimate,
    pub r: Vec<f64>,
    pub intensity: Vec<Estimate>,
    pub g2: G2Grid,
    pub diagonal: DiagonalCuts,
}

impl RunObservables {
    pub fn series_at(&self, time: f64) -> Option<&SeriesPoint> {
        self.series
            .iter()
            .find(|s| (s.time - time).abs() <= 1e-9 * time.abs().max(1.0))
    }

    pub fn snapshot_at(&self, time: f64) -> Option<&FieldSnapshot> {
        self.snapshots
            .iter()
            .find(|s| (s.time - time).abs() <= 1e-9 * time.abs().max(1.0))
    }

    pub fn record_at(&self, time: f64) -> Option<ObservableRecord> {
        let series = self.series_at(time)?;
        let snap = self.snapshot_at(time)?;
        Some(ObservableRecord {
            time: snap.time,
            populations: series.populations.clone(),
            photon_number: series.photon_number,
            r: snap.r.clone(),
            intensity: snap.intensity.clone(),
            g2: snap.g2.clone(),
            diagonal: g2_diagonal_cuts(&snap.g2).ok()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Constants, Mode};

    fn single_mode(w: f64) -> CavityModel {
        let mode = Mode {
            index: 1,
            frequency: w,
            coupling: 0.0,
        };
        CavityModel::from_modes(10.0, 5.0, vec![mode], Constants::default()).unwrap()
    }

    #[test]
    fn photon_number_examples() {
        let cav = single_mode(0.8);
        let vacuum_like = PhasePoint {
            q: vec![(1.0 / 0.8f64).sqrt()],
            p: vec![0.8f64.sqrt()],
        };
        // ½(P²/ω + ωQ² − 1) = ½(1 + 1 − 1)
        assert!((photon_number(&vacuum_like, &cav) - 0.5).abs() < 1e-15);
        assert_eq!(photon_number(&PhasePoint::zeros(1), &cav), -0.5);
    }

    #[test]
    fn packed_index_is_row_major_upper_triangle() {
        let n = 5;
        let mut k = 0;
        for i in 0..n {
            for j in i..n {
                assert_eq!(packed_index(n, i, j), k);
                assert_eq!(packed_index(n, j, i), k);
                k += 1;
            }
        }
    }

    #[test]
    fn single_mode_reductions() {
        let w = 1.3;
        let cav = single_mode(w);
        let r = 2.7;
        let z = cav.mode_function(1, r).unwrap();
        for q in [-1.1, 0.0, 0.4, 2.0] {
            let point = PhasePoint { q: vec![q], p: vec![0.3] };
            let paper = g2_numerator(&point, &cav, r, r, G2Variant::Paper).unwrap();
            let want = 4.0 * w * w * z.powi(4) * q.powi(4) - 12.0 * w * z.powi(4) * q * q;
            assert!((paper - want).abs() < 1e-12 * want.abs().max(1e-3));
            let full = g2_numerator(&point, &cav, r, r, G2Variant::Full).unwrap();
            assert!((full - paper - 3.0 * z.powi(4)).abs() < 1e-12);
            let a = intensity(&point, &cav, &[r], IntensityVariant::Full).unwrap()[0];
            let b = intensity(&point, &cav, &[r], IntensityVariant::Diagonal).unwrap()[0];
            assert!((a - b).abs() < 1e-12);
            assert!((a - (2.0 * w * z * z * q * q - z * z)).abs() < 1e-12);
        }
    }

    #[test]
    fn g2_masks_dark_cells() {
        assert_eq!(g2(1.0, 2.0, 0.5, 0.0), Some(1.0));
        assert_eq!(g2(1.0, 2.0, 0.5, 1.0), None);
        assert_eq!(g2(0.0, 0.0, 0.0, 0.0), None);
        assert_eq!(g2(1.0, -1.0, 2.0, f64::NEG_INFINITY), None);
        let flat = [Estimate::exact(0.0); 3];
        assert_eq!(mask_threshold(&flat, 1e-3), f64::INFINITY);
        let peaked = [Estimate::exact(0.5), Estimate::exact(4.0)];
        assert_eq!(mask_threshold(&peaked, 0.25), 1.0);
    }

    fn symmetric_grid(n: usize) -> G2Grid {
        let r: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let intensity: Vec<f64> = (0..n).map(|i| 1.0 + i as f64).collect();
        // invariant under (i, j) → (j, i) and under reflection about the center
        let numerator: Vec<f64> = (0..n * n)
            .map(|k| {
                let (i, j) = ((k / n) as f64, (k % n) as f64);
                let m = (n - 1) as f64;
                intensity[k / n] * intensity[k % n] * (1.0 + 0.1 * (i - j).abs() + 0.01 * (i + j - m).powi(2))
            })
            .collect();
        G2Grid::from_exact(r, numerator, intensity, 0.0)
    }

    #[test]
    fn cuts_cover_both_diagonals() {
        let grid = symmetric_grid(5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(grid.value(i, j), grid.value(j, i));
            }
        }
        let cuts = g2_diagonal_cuts(&grid).unwrap();
        assert_eq!(cuts.s.len(), 5);
        assert!((cuts.s[0] + cuts.s[4]).abs() < 1e-12);
        assert!((cuts.s[4] - 2.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        // both cuts meet at the center cell
        assert_eq!(cuts.plus[2], cuts.minus[2]);
        assert_eq!(cuts.minus[0], grid.get(0, 4));
        assert_eq!(cuts.plus[4], grid.get(4, 4));
        let shifted = cuts_about(&grid, 3).unwrap();
        assert_eq!(shifted.s.len(), 4);
        assert!(cuts_about(&grid, 9).is_err());
    }

    #[test]
    fn asymmetry_of_identical_cuts_is_zero() {
        let e = |v| Some(Estimate::exact(v));
        let same = DiagonalCuts {
            s: vec![-1.0, 0.0, 1.0],
            plus: vec![e(0.5), e(0.2), None],
            minus: vec![e(0.5), e(0.2), e(0.9)],
        };
        assert_eq!(same.asymmetry(), Some(0.0));
        let diff = DiagonalCuts {
            plus: vec![e(0.5), e(0.4), None],
            ..same.clone()
        };
        assert!((diff.asymmetry().unwrap() - 0.1).abs() < 1e-15);
        let empty = DiagonalCuts {
            plus: vec![None; 3],
            ..same
        };
        assert_eq!(empty.asymmetry(), None);
    }
}
