use alloc::vec::Vec;
use core::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Equal-weight mixture of Gaussian kernels truncated to `[low, high]`.
/// With no kernels it is the uniform density on the interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ParzenEstimator {
    low: f64,
    high: f64,
    means: Vec<f64>,
    bandwidths: Vec<f64>,
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z * FRAC_1_SQRT_2)
}

impl ParzenEstimator {
    /// Kernels at `points` sharing the Scott-rule bandwidth
    /// `sd · n^(-1/5)`, floored at `floor`, plus one prior kernel at the
    /// interval midpoint with bandwidth equal to the interval width. The prior
    /// keeps both densities from vanishing where no observation lies, which
    /// would otherwise send `l / g` to the interval edges.
    pub fn fit(points: &[f64], low: f64, high: f64, floor: f64) -> Self {
        let n = points.len();
        let bandwidth = if n == 0 {
            floor
        } else {
            let mean = points.iter().sum::<f64>() / n as f64;
            let var = if n > 1 {
                points.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            let scott = libm::sqrt(var) * libm::pow(n as f64, -0.2);
            scott.max(floor)
        };
        let mut means = points.to_vec();
        let mut bandwidths = alloc::vec![bandwidth; n];
        means.push(0.5 * (low + high));
        bandwidths.push(high - low);
        ParzenEstimator {
            low,
            high,
            means,
            bandwidths,
        }
    }

    pub fn with_bandwidths(means: Vec<f64>, bandwidths: Vec<f64>, low: f64, high: f64) -> Self {
        assert_eq!(means.len(), bandwidths.len());
        ParzenEstimator {
            low,
            high,
            means,
            bandwidths,
        }
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn pdf(&self, x: f64) -> f64 {
        if x < self.low || x > self.high {
            return 0.0;
        }
        if self.means.is_empty() {
            return 1.0 / (self.high - self.low);
        }
        let total: f64 = self
            .means
            .iter()
            .zip(&self.bandwidths)
            .map(|(&mu, &h)| {
                let z = (x - mu) / h;
                let mass = normal_cdf((self.high - mu) / h) - normal_cdf((self.low - mu) / h);
                libm::exp(-0.5 * z * z) / (h * libm::sqrt(2.0 * PI) * mass.max(f64::MIN_POSITIVE))
            })
            .sum();
        total / self.means.len() as f64
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        libm::log(self.pdf(x).max(f64::MIN_POSITIVE))
    }

    /// Picks a kernel uniformly, then rejection-samples its truncated normal.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.means.is_empty() {
            return rng.random_range(self.low..=self.high);
        }
        let k = rng.random_range(0..self.means.len());
        let (mu, h) = (self.means[k], self.bandwidths[k]);
        for _ in 0..64 {
            let z: f64 = StandardNormal.sample(rng);
            let x = mu + h * z;
            if (self.low..=self.high).contains(&x) {
                return x;
            }
        }
        mu.clamp(self.low, self.high)
    }
}

/// Add-one smoothed frequencies over `k` categories.
#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalEstimator {
    weights: Vec<f64>,
}

impl CategoricalEstimator {
    pub fn fit(indices: &[usize], k: usize) -> Self {
        let mut counts = alloc::vec![1.0; k];
        for &i in indices {
            counts[i] += 1.0;
        }
        let total = (indices.len() + k) as f64;
        CategoricalEstimator {
            weights: counts.into_iter().map(|c| c / total).collect(),
        }
    }

    pub fn pmf(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_mixture_integrates_to_one() {
        let est = ParzenEstimator::fit(&[0.05, 0.3, 0.9], 0.0, 1.0, 1e-3);
        let n = 20_000;
        let h = 1.0 / n as f64;
        let integral: f64 = (0..n).map(|i| est.pdf((i as f64 + 0.5) * h) * h).sum();
        assert!((integral - 1.0).abs() < 1e-3, "{integral}");
    }

    #[test]
    fn scott_bandwidth_and_floor() {
        let single = ParzenEstimator::fit(&[0.4], 0.0, 1.0, 1e-3);
        assert_eq!(single.bandwidths(), &[1e-3, 1.0]);
        let two = ParzenEstimator::fit(&[0.0, 1.0], 0.0, 1.0, 1e-3);
        let expected = libm::sqrt(0.5) * libm::pow(2.0, -0.2);
        assert!((two.bandwidths()[0] - expected).abs() < 1e-15);
    }

    #[test]
    fn smoothed_frequencies() {
        let est = CategoricalEstimator::fit(&[0, 0, 1], 3);
        assert_eq!(est.pmf(0), 3.0 / 6.0);
        assert_eq!(est.pmf(2), 1.0 / 6.0);
    }
}
