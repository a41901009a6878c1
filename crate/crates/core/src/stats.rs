//! Streaming statistics with exact merging, estimate types, and the small
//! amount of distribution theory the reports need.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("ratio denominator is not significantly positive: value {value} with stderr {stderr}")]
    NonPositiveValue { value: f64, stderr: f64 },
}

/// Welford/Chan accumulator: count, mean, and centered second moment `M2`.
/// Merging two accumulators reproduces the sequential result up to float
/// round-off, so partitioning work across workers does not change estimates.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RunningStats {
    n: u64,
    mean: f64,
    m2: f64,
}

impl RunningStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Self) -> Self {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * other.n as f64 / n as f64;
        let m2 =
            self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64;
        Self { n, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn m2(&self) -> f64 {
        self.m2
    }

    /// Unbiased sample variance (0 for fewer than two samples).
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

/// Estimator quality flags carried alongside a value instead of aborting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EstimateFlags {
    /// Censored fraction exceeded the configured ceiling.
    pub excessive_censoring: bool,
    /// Sample kurtosis of the integrand exceeded the heavy-tail ceiling
    /// (e.g. a gauge close to non-gaugeable).
    pub heavy_tail: bool,
}

/// A Monte Carlo estimate with its standard error and censoring accounting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub n: u64,
    pub censored_count: u64,
    pub flags: EstimateFlags,
}

impl Estimate {
    pub fn from_stats(s: &RunningStats, censored_count: u64) -> Self {
        Self {
            value: s.mean(),
            stderr: s.stderr(),
            n: s.count(),
            censored_count,
            flags: EstimateFlags::default(),
        }
    }

    pub fn exact(value: f64) -> Self {
        Self {
            value,
            stderr: 0.0,
            n: 0,
            censored_count: 0,
            flags: EstimateFlags::default(),
        }
    }

    /// First-order (delta method) ratio `self / den`. Errors when the
    /// denominator is not positive by a 3-sigma margin.
    pub fn ratio(&self, den: &Estimate) -> Result<Estimate, StatsError> {
        if den.value - 3.0 * den.stderr <= 0.0 {
            return Err(StatsError::NonPositiveValue {
                value: den.value,
                stderr: den.stderr,
            });
        }
        let r = self.value / den.value;
        let rel2 = (self.stderr / self.value).powi(2) + (den.stderr / den.value).powi(2);
        let stderr = if self.value == 0.0 {
            self.stderr / den.value
        } else {
            r.abs() * rel2.sqrt()
        };
        Ok(Estimate {
            value: r,
            stderr,
            n: self.n.min(den.n),
            censored_count: self.censored_count + den.censored_count,
            flags: EstimateFlags {
                excessive_censoring: self.flags.excessive_censoring
                    || den.flags.excessive_censoring,
                heavy_tail: self.flags.heavy_tail || den.flags.heavy_tail,
            },
        })
    }
}

/// Regularized lower incomplete gamma `P(s, x)` (series + continued
/// fraction), used for chi-square tail probabilities.
pub fn regularized_gamma_p(s: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let ln_gamma = ln_gamma(s);
    if x < s + 1.0 {
        // series
        let mut term = 1.0 / s;
        let mut sum = term;
        let mut k = s;
        for _ in 0..500 {
            k += 1.0;
            term *= x / k;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                break;
            }
        }
        sum * (-x + s * x.ln() - ln_gamma).exp()
    } else {
        // continued fraction for Q(s, x)
        let mut b = x + 1.0 - s;
        let mut c = 1e300;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..500 {
            let an = -(i as f64) * (i as f64 - s);
            b += 2.0;
            d = an * d + b;
            if d.abs() < 1e-300 {
                d = 1e-300;
            }
            c = b + an / c;
            if c.abs() < 1e-300 {
                c = 1e-300;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                break;
            }
        }
        1.0 - (-x + s * x.ln() - ln_gamma).exp() * h
    }
}

/// Natural log of the gamma function (Lanczos).
pub fn ln_gamma(x: f64) -> f64 {
    const G: [f64; 7] = [
        1.000000000190015,
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let y = x;
    let tmp = x + 5.5;
    let tmp = tmp - (x + 0.5) * tmp.ln();
    let mut ser = G[0];
    for (j, g) in G.iter().enumerate().skip(1) {
        ser += g / (y + j as f64);
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Upper tail p-value of a chi-square statistic with `k` degrees of freedom.
pub fn chi_square_p_value(stat: f64, k: usize) -> f64 {
    1.0 - regularized_gamma_p(k as f64 / 2.0, stat / 2.0)
}

/// Sample excess kurtosis of a slice (Fisher definition; 0 for a normal).
pub fn excess_kurtosis(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if n < 4.0 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n;
    let m2 = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    if m2 == 0.0 {
        0.0
    } else {
        m4 / (m2 * m2) - 3.0
    }
}
