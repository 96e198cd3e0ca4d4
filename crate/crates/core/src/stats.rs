//! Streaming weighted means and standard errors.
//!
//! For normalized weights v_j = w_j / Σw the standard error of the weighted
//! mean is
//!
//! ```text
//! SE² = Σ v_j² (x_j − x̄)² / (1 − Σ v_j²)
//! ```
//!
//! which reduces to s²/n for uniform weights. Only the raw sums are stored so
//! accumulators can be merged in any fixed order.

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn exact(mean: f64) -> Self {
        Self { mean, stderr: 0.0 }
    }
}

/// Σw and Σw² over the accepted samples.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct WeightTotals {
    pub w: f64,
    pub w2: f64,
    pub count: usize,
}

impl WeightTotals {
    pub fn add(&mut self, w: f64) {
        self.w += w;
        self.w2 += w * w;
        self.count += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        self.w += other.w;
        self.w2 += other.w2;
        self.count += other.count;
    }

    /// 1 − Σv², the effective-sample correction; zero for a single sample.
    fn dof(&self) -> f64 {
        1.0 - self.w2 / (self.w * self.w)
    }
}

/// Weighted first and second moments of a fixed-length vector observable.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    sw: Vec<f64>,
    sw2: Vec<f64>,
    sw2xx: Vec<f64>,
}

impl Moments {
    pub fn new(n: usize) -> Self {
        Self {
            sw: vec![0.0; n],
            sw2: vec![0.0; n],
            sw2xx: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.sw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sw.is_empty()
    }

    #[inline]
    pub fn add_one(&mut self, i: usize, w: f64, x: f64) {
        self.sw[i] += w * x;
        let w2x = w * w * x;
        self.sw2[i] += w2x;
        self.sw2xx[i] += w2x * x;
    }

    pub fn add(&mut self, w: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.len());
        for (i, &v) in x.iter().enumerate() {
            self.add_one(i, w, v);
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.sw.iter_mut().zip(&other.sw) {
            *a += b;
        }
        for (a, b) in self.sw2.iter_mut().zip(&other.sw2) {
            *a += b;
        }
        for (a, b) in self.sw2xx.iter_mut().zip(&other.sw2xx) {
            *a += b;
        }
    }

    pub fn mean(&self, i: usize, totals: &WeightTotals) -> f64 {
        self.sw[i] / totals.w
    }

    pub fn estimate(&self, i: usize, totals: &WeightTotals) -> Estimate {
        let mean = self.mean(i, totals);
        let var = self.variance_of_mean(i, totals, mean);
        Estimate {
            mean,
            stderr: if var.is_nan() { var } else { var.max(0.0).sqrt() },
        }
    }

    pub fn estimates(&self, totals: &WeightTotals) -> Vec<Estimate> {
        (0..self.len()).map(|i| self.estimate(i, totals)).collect()
    }

    fn variance_of_mean(&self, i: usize, totals: &WeightTotals, mean: f64) -> f64 {
        let dof = totals.dof();
        if dof <= 0.0 {
            return f64::NAN;
        }
        let raw = self.sw2xx[i] - 2.0 * mean * self.sw2[i] + mean * mean * totals.w2;
        raw / (totals.w * totals.w) / dof
    }

    pub(crate) fn sw2(&self, i: usize) -> f64 {
        self.sw2[i]
    }
}

/// Σw²·x·y for pairs of entries of two observables, used for covariances of
/// ratio estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossMoments {
    sw2xy: Vec<f64>,
}

impl CrossMoments {
    pub fn new(n: usize) -> Self {
        Self { sw2xy: vec![0.0; n] }
    }

    #[inline]
    pub fn add_one(&mut self, i: usize, w: f64, x: f64, y: f64) {
        self.sw2xy[i] += w * w * x * y;
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.sw2xy.iter_mut().zip(&other.sw2xy) {
            *a += b;
        }
    }

    /// Covariance of the weighted means of x (entry `ix` of `xs`) and y (entry
    /// `iy` of `ys`), where entry `k` of `self` accumulated x·y.
    pub fn covariance(
        &self,
        k: usize,
        xs: &Moments,
        ix: usize,
        ys: &Moments,
        iy: usize,
        totals: &WeightTotals,
    ) -> f64 {
        let dof = totals.dof();
        if dof <= 0.0 {
            return f64::NAN;
        }
        let mx = xs.mean(ix, totals);
        let my = ys.mean(iy, totals);
        let raw = self.sw2xy[k] - mx * ys.sw2(iy) - my * xs.sw2(ix) + mx * my * totals.w2;
        raw / (totals.w * totals.w) / dof
    }
}
