//! Latency distributions over 1 ms bins.

use num_traits::Float;

/// Default upper edge of a distribution, in ms. Mass above it is folded
/// into the last bin.
pub const DEFAULT_CEILING_MS: usize = 10_000;

/// Probability mass per 1 ms bin. Bin `i` holds latencies in `(i - 1, i]`
/// ms, so bin 0 is exactly zero and a constant 7 ms latency lands in bin 7.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<T> {
    masses: Vec<T>,
}

/// Bin index of a latency sample.
pub fn bin_of(latency_ms: f64, ceiling: usize) -> usize {
    let b = latency_ms.max(0.0).ceil();
    if b >= ceiling as f64 {
        ceiling
    } else {
        b as usize
    }
}

fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("finite float")
}

impl<T: Float> Distribution<T> {
    /// All mass at `ms`.
    pub fn delta(ms: usize) -> Self {
        let mut masses = vec![T::zero(); ms + 1];
        masses[ms] = T::one();
        Distribution { masses }
    }

    /// Equal mass on every bin in `lo..=hi`.
    pub fn uniform(lo: usize, hi: usize) -> Self {
        assert!(lo <= hi, "empty uniform range");
        let p = T::one() / cast((hi - lo + 1) as f64);
        let mut masses = vec![T::zero(); hi + 1];
        for m in &mut masses[lo..] {
            *m = p;
        }
        Distribution { masses }
    }

    /// Normalized histogram counts. `None` if the total is zero.
    pub fn from_counts(counts: &[u64]) -> Option<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return None;
        }
        let t = total as f64;
        let masses = counts.iter().map(|&c| cast::<T>(c as f64 / t)).collect();
        Some(Distribution { masses }.trimmed())
    }

    /// Normalized masses. `None` if they are negative or sum to zero.
    pub fn from_masses(masses: Vec<T>) -> Option<Self> {
        if masses.iter().any(|m| *m < T::zero() || !m.is_finite()) {
            return None;
        }
        let total = masses.iter().fold(T::zero(), |a, &b| a + b);
        if total <= T::zero() {
            return None;
        }
        Some(
            Distribution {
                masses: masses.into_iter().map(|m| m / total).collect(),
            }
            .trimmed(),
        )
    }

    pub fn from_samples(samples: &[f64], ceiling: usize) -> Option<Self> {
        let mut counts = Vec::new();
        for &s in samples {
            let b = bin_of(s, ceiling);
            if counts.len() <= b {
                counts.resize(b + 1, 0);
            }
            counts[b] += 1;
        }
        Self::from_counts(&counts)
    }

    fn trimmed(mut self) -> Self {
        while self.masses.len() > 1 && self.masses.last().is_some_and(|m| m.is_zero()) {
            self.masses.pop();
        }
        self
    }

    fn capped(mut self, ceiling: usize) -> Self {
        if self.masses.len() > ceiling + 1 {
            let over = self.masses[ceiling..].iter().fold(T::zero(), |a, &b| a + b);
            self.masses.truncate(ceiling + 1);
            self.masses[ceiling] = over;
        }
        self.trimmed()
    }

    pub fn masses(&self) -> &[T] {
        &self.masses
    }

    /// Largest bin with mass.
    pub fn max_bin(&self) -> usize {
        self.masses.len() - 1
    }

    pub fn total(&self) -> T {
        self.masses.iter().fold(T::zero(), |a, &b| a + b)
    }

    pub fn mass(&self, bin: usize) -> T {
        self.masses.get(bin).copied().unwrap_or_else(T::zero)
    }

    pub fn mean(&self) -> T {
        self.masses
            .iter()
            .enumerate()
            .fold(T::zero(), |a, (i, &m)| a + m * cast(i as f64))
    }

    /// `P(X <= bin)`.
    pub fn cdf(&self, bin: usize) -> T {
        self.masses
            .iter()
            .take(bin + 1)
            .fold(T::zero(), |a, &b| a + b)
    }

    /// Smallest bin whose cumulative mass reaches `q`. The bin's upper edge
    /// makes the answer err on the slow side.
    pub fn quantile(&self, q: f64) -> usize {
        let q: T = cast(q);
        let tolerance: T = cast(1e-12);
        let mut acc = T::zero();
        for (i, &m) in self.masses.iter().enumerate() {
            acc = acc + m;
            if acc + tolerance >= q {
                return i;
            }
        }
        self.max_bin()
    }

    /// Distribution of the sum of independent draws.
    pub fn convolve(&self, other: &Self) -> Self {
        self.convolve_capped(other, DEFAULT_CEILING_MS)
    }

    pub fn convolve_capped(&self, other: &Self, ceiling: usize) -> Self {
        let mut out = vec![T::zero(); self.masses.len() + other.masses.len() - 1];
        for (i, &a) in self.masses.iter().enumerate() {
            if a.is_zero() {
                continue;
            }
            for (j, &b) in other.masses.iter().enumerate() {
                out[i + j] = out[i + j] + a * b;
            }
        }
        Distribution { masses: out }.capped(ceiling)
    }

    /// Distribution of the maximum of independent draws: the product of the
    /// CDFs, differenced back into masses.
    pub fn max_combine(&self, other: &Self) -> Self {
        let n = self.masses.len().max(other.masses.len());
        let (mut ca, mut cb) = (T::zero(), T::zero());
        let mut prev = T::zero();
        let mut masses = Vec::with_capacity(n);
        for i in 0..n {
            ca = ca + self.mass(i);
            cb = cb + other.mass(i);
            let c = ca * cb;
            masses.push((c - prev).max(T::zero()));
            prev = c;
        }
        Distribution { masses }.trimmed()
    }

    /// Maximum of `k` independent draws, for a wave of `k` concurrent
    /// requests modeled from a single-request distribution.
    pub fn wave(&self, k: usize) -> Self {
        let mut out = self.clone();
        for _ in 1..k.max(1) {
            out = out.max_combine(self);
        }
        out
    }

    /// Half the L1 distance between the mass vectors.
    pub fn total_variation(&self, other: &Self) -> T {
        let n = self.masses.len().max(other.masses.len());
        let sum = (0..n).fold(T::zero(), |a, i| a + (self.mass(i) - other.mass(i)).abs());
        sum / cast(2.0)
    }

    /// Converts the mass type.
    pub fn cast<U: Float>(&self) -> Distribution<U> {
        Distribution {
            masses: self
                .masses
                .iter()
                .map(|m| U::from(*m).expect("finite mass"))
                .collect(),
        }
    }
}
