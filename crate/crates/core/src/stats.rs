//! Small statistics toolkit: mergeable moments, confidence intervals,
//! Kolmogorov-Smirnov distances, order statistics and log-sum-exp.

use serde::{Deserialize, Serialize};

/// 97.5% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Count-sum-sumsq triple. Merging is associative, so parallel batches can be
/// reduced in any grouping and still give the same statistic (up to the
/// floating point order, which callers fix by reducing in batch order).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(mut self, other: Moments) -> Moments {
        self.count += other.count;
        self.sum += other.sum;
        self.sumsq += other.sumsq;
        self
    }

    pub fn from_slice(xs: &[f64]) -> Moments {
        let mut m = Moments::default();
        xs.iter().for_each(|&x| m.push(x));
        m
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::NAN
        } else {
            self.sum / self.count as f64
        }
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return f64::NAN;
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        ((self.sumsq - n * mean * mean) / (n - 1.0)).max(0.0)
    }

    pub fn se(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.mean(), se: self.se(), count: self.count }
    }
}

/// A Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub count: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, se: 0.0, count: 0 }
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.value - Z95 * self.se, self.value + Z95 * self.se)
    }

    /// `|self - target| <= k * se`, with a tiny absolute slack for exact ties.
    pub fn within_se(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.se + 1e-12 * target.abs().max(1.0)
    }

    /// Scale by a constant.
    pub fn scale(&self, c: f64) -> Estimate {
        Estimate { value: self.value * c, se: self.se * c.abs(), count: self.count }
    }

    /// Ratio of two independent estimates, first-order error propagation.
    pub fn ratio(&self, den: &Estimate) -> Estimate {
        let r = self.value / den.value;
        let rel = ((self.se / self.value).powi(2) + (den.se / den.value).powi(2)).sqrt();
        Estimate { value: r, se: (r * rel).abs(), count: self.count.min(den.count) }
    }

    /// Product of two independent estimates.
    pub fn product(&self, other: &Estimate) -> Estimate {
        let p = self.value * other.value;
        let rel = ((self.se / self.value).powi(2) + (other.se / other.value).powi(2)).sqrt();
        Estimate { value: p, se: (p * rel).abs(), count: self.count.min(other.count) }
    }

    /// Joint check of two independent estimates: `|a-b| <= k * sqrt(se_a²+se_b²)`.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        let joint = (self.se.powi(2) + other.se.powi(2)).sqrt();
        (self.value - other.value).abs() <= k * joint + 1e-12
    }
}

/// Weighted sample accumulator for self-normalised importance sampling.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct WeightedMoments {
    pub count: u64,
    pub sum_w: f64,
    pub sum_w2: f64,
    pub sum_wx: f64,
    pub sum_w2x: f64,
    pub sum_w2x2: f64,
}

impl WeightedMoments {
    pub fn push(&mut self, w: f64, x: f64) {
        self.count += 1;
        self.sum_w += w;
        self.sum_w2 += w * w;
        self.sum_wx += w * x;
        self.sum_w2x += w * w * x;
        self.sum_w2x2 += w * w * x * x;
    }

    pub fn merge(mut self, o: WeightedMoments) -> WeightedMoments {
        self.count += o.count;
        self.sum_w += o.sum_w;
        self.sum_w2 += o.sum_w2;
        self.sum_wx += o.sum_wx;
        self.sum_w2x += o.sum_w2x;
        self.sum_w2x2 += o.sum_w2x2;
        self
    }

    /// Kish effective sample size.
    pub fn ess(&self) -> f64 {
        if self.sum_w2 == 0.0 {
            0.0
        } else {
            self.sum_w * self.sum_w / self.sum_w2
        }
    }

    /// Self-normalised mean `Σwx / Σw` with delta-method standard error.
    pub fn normalized(&self) -> Estimate {
        let mean = self.sum_wx / self.sum_w;
        // Σ w²(x-mean)² / (Σw)²
        let num = self.sum_w2x2 - 2.0 * mean * self.sum_w2x + mean * mean * self.sum_w2;
        let se = (num.max(0.0)).sqrt() / self.sum_w;
        Estimate { value: mean, se, count: self.count }
    }
}

/// Wilson score interval for a binomial proportion at ~95%.
pub fn wilson(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z95 * ((p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt()) / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// A proportion estimate with its Wilson interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proportion {
    pub successes: u64,
    pub trials: u64,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Proportion {
    pub fn new(successes: u64, trials: u64) -> Self {
        let (lo, hi) = wilson(successes, trials);
        let value = if trials == 0 { f64::NAN } else { successes as f64 / trials as f64 };
        Proportion { successes, trials, value, lo, hi }
    }

    pub fn estimate(&self) -> Estimate {
        let p = self.value;
        Estimate { value: p, se: (p * (1.0 - p) / self.trials as f64).sqrt(), count: self.trials }
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// CDF of the Rayleigh law with density `t e^{-t²/2}`.
pub fn rayleigh_cdf(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        -(-0.5 * t * t).exp_m1()
    }
}

/// CDF of the 3-dimensional Bessel process at time 1 started at 0 (chi law
/// with three degrees of freedom, density `sqrt(2/π) t² e^{-t²/2}`).
pub fn chi3_cdf(t: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        libm::erf(t / std::f64::consts::SQRT_2)
            - (2.0 / std::f64::consts::PI).sqrt() * t * (-0.5 * t * t).exp()
    }
}

/// One-sample Kolmogorov-Smirnov distance between the empirical law of
/// `sample` and a continuous CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs: Vec<f64> = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0_f64, |d, (i, &x)| {
        let f = cdf(x);
        d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n)
    })
}

/// Two-sample Kolmogorov-Smirnov distance. Ties are handled by comparing the
/// empirical CDFs only after every copy of a value, so discrete laws work.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (na, nb) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < xs.len() || j < ys.len() {
        let x = match (xs.get(i), ys.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        while i < xs.len() && xs[i] <= x {
            i += 1;
        }
        while j < ys.len() && ys[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Weighted Kolmogorov-Smirnov distance; weights need not be normalised.
pub fn weighted_ks_distance(sample: &[(f64, f64)], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs: Vec<(f64, f64)> = sample.iter().copied().filter(|&(_, w)| w > 0.0).collect();
    xs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = xs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    let mut d = 0.0_f64;
    for &(x, w) in &xs {
        let f = cdf(x);
        d = d.max(f - acc / total);
        acc += w;
        d = d.max(acc / total - f);
    }
    d
}

/// Linear-interpolated quantile (type 7) of an unsorted sample.
pub fn quantile(sample: &[f64], q: f64) -> f64 {
    if sample.is_empty() {
        return f64::NAN;
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    quantile_sorted(&xs, q)
}

pub fn quantile_sorted(xs: &[f64], q: f64) -> f64 {
    let h = (xs.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo])
}

pub fn median(sample: &[f64]) -> f64 {
    quantile(sample, 0.5)
}

/// Median and interquartile range `(q25, q50, q75)`.
pub fn quartiles(sample: &[f64]) -> (f64, f64, f64) {
    if sample.is_empty() {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    (quantile_sorted(&xs, 0.25), quantile_sorted(&xs, 0.5), quantile_sorted(&xs, 0.75))
}

/// Streaming log-sum-exp accumulator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogSumExp {
    max: f64,
    scaled: f64,
}

impl Default for LogSumExp {
    fn default() -> Self {
        LogSumExp { max: f64::NEG_INFINITY, scaled: 0.0 }
    }
}

impl LogSumExp {
    pub fn push(&mut self, x: f64) {
        if x == f64::NEG_INFINITY {
            return;
        }
        if x <= self.max {
            self.scaled += (x - self.max).exp();
        } else {
            self.scaled = self.scaled * (self.max - x).exp() + 1.0;
            self.max = x;
        }
    }

    pub fn value(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.scaled.ln()
        }
    }
}

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = LogSumExp::default();
    xs.into_iter().for_each(|x| acc.push(x));
    acc.value()
}

/// Ordinary least squares fit `y = a + b x`; returns `(a, b, se_b)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let rss: f64 = xs.iter().zip(ys).map(|(x, y)| (y - a - b * x).powi(2)).sum();
    let se_b = if xs.len() > 2 { (rss / (n - 2.0) / sxx).sqrt() } else { f64::NAN };
    (a, b, se_b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sample_ks_handles_ties() {
        let a = [0.0, 0.0, 1.0, 1.0];
        let b = [0.0, 1.0, 0.0, 1.0];
        assert_eq!(ks_two_sample(&a, &b), 0.0);
        assert_eq!(ks_two_sample(&[0.0, 0.0], &[1.0]), 1.0);
        assert!((ks_two_sample(&[0.0, 1.0, 1.0, 1.0], &[0.0, 0.0, 1.0, 1.0]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn moments_merge_is_associative() {
        let xs = [1.0, 2.0, 4.0, 8.0, 16.0];
        let whole = Moments::from_slice(&xs);
        let split = Moments::from_slice(&xs[..2]).merge(Moments::from_slice(&xs[2..]));
        assert_eq!(whole.count, split.count);
        assert!((whole.mean() - split.mean()).abs() < 1e-15);
        assert!((whole.variance() - split.variance()).abs() < 1e-12);
        assert!((whole.mean() - 6.2).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_matches_naive_and_survives_overflow() {
        let xs = [-3.0, 0.5, 2.0, -10.0];
        let naive = xs.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
        assert!((log_sum_exp(xs) - naive).abs() < 1e-14);
        assert!((log_sum_exp([1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp([]), f64::NEG_INFINITY);
        assert_eq!(log_sum_exp([f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        assert!(ks_distance(&xs, |x| x.clamp(0.0, 1.0)) <= 0.5 / n as f64 + 1e-12);
        let w: Vec<(f64, f64)> = xs.iter().map(|&x| (x, 2.0)).collect();
        assert!(weighted_ks_distance(&w, |x| x.clamp(0.0, 1.0)) <= 0.5 / n as f64 + 1e-12);
    }

    #[test]
    fn special_cdfs() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.96) - 0.975).abs() < 1e-4);
        assert!((rayleigh_cdf(1.0) - (1.0 - (-0.5f64).exp())).abs() < 1e-15);
        // chi3 median is about 1.5382
        assert!((chi3_cdf(1.538_172) - 0.5).abs() < 1e-5);
    }

    #[test]
    fn wilson_contains_point_estimate() {
        let (lo, hi) = wilson(30, 100);
        assert!(lo < 0.3 && 0.3 < hi);
        assert_eq!(wilson(0, 0), (0.0, 1.0));
    }

    #[test]
    fn quartiles_of_range() {
        let xs: Vec<f64> = (0..=100).map(f64::from).collect();
        assert_eq!(quartiles(&xs), (25.0, 50.0, 75.0));
    }

    #[test]
    fn linear_fit_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let (a, b, _) = linear_fit(&xs, &ys);
        assert!((a - 1.0).abs() < 1e-12 && (b - 2.0).abs() < 1e-12);
    }
}
