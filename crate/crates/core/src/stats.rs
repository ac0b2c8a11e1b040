//! Order-stable aggregation.
//!
//! Replicas are folded in index order inside fixed-size chunks and chunks
//! are merged in chunk order, so results do not depend on how many worker
//! threads ran the chunks.

/// Welford accumulator with Chan's pairwise merge.
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

    pub fn merge(&mut self, other: &RunningStats) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * (other.n as f64 / n as f64);
        let m2 = self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64 / n as f64);
        *self = RunningStats { n, mean, m2 };
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for RunningStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = RunningStats::new();
        iter.into_iter().for_each(|x| s.push(x));
        s
    }
}

/// Bivariate running means and co-moment, mergeable like [`RunningStats`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CoMoment {
    n: u64,
    mean_x: f64,
    mean_y: f64,
    c: f64,
}

impl CoMoment {
    pub fn push(&mut self, x: f64, y: f64) {
        self.n += 1;
        let dx = x - self.mean_x;
        self.mean_x += dx / self.n as f64;
        self.mean_y += (y - self.mean_y) / self.n as f64;
        self.c += dx * (y - self.mean_y);
    }

    pub fn merge(&mut self, other: &CoMoment) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let n = self.n + other.n;
        let w = other.n as f64 / n as f64;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        self.c += other.c + dx * dy * (self.n as f64 * w);
        self.mean_x += dx * w;
        self.mean_y += dy * w;
        self.n = n;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    /// Unbiased sample covariance.
    pub fn covariance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.c / (self.n - 1) as f64
        }
    }

    /// `mean(xy)`, the uncentered second moment.
    pub fn raw_moment(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            self.c / self.n as f64 + self.mean_x * self.mean_y
        }
    }
}

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Trapezoid rule on a uniform grid with spacing `h`.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner = compensated_sum(values[1..n - 1].iter().copied());
            h * (0.5 * (values[0] + values[n - 1]) + inner)
        }
    }
}

/// Variance of the sample variance estimator, from the fourth central moment:
/// `Var(s²) ≈ (m4 - σ⁴(n-3)/(n-1))/n`.
pub fn variance_of_variance(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    if n < 4.0 {
        return f64::INFINITY;
    }
    let stats: RunningStats = samples.iter().copied().collect();
    let mean = stats.mean();
    let m4 = compensated_sum(samples.iter().map(|x| (x - mean).powi(4))) / n;
    let s2 = stats.variance();
    ((m4 - s2 * s2 * (n - 3.0) / (n - 1.0)) / n).max(0.0)
}
