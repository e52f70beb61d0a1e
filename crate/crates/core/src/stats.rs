//! One-pass mean/variance accumulation over fixed-length observation vectors.

/// Welford accumulator for a vector of independent scalar observables.
///
/// Partial accumulators combine with [`VecWelford::merge`] (Chan et al.
/// pairwise update). Merging in a fixed order gives bit-identical results
/// no matter how the partials were scheduled.
#[derive(Clone, Debug, PartialEq)]
pub struct VecWelford {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl VecWelford {
    pub fn new(len: usize) -> Self {
        Self { count: 0, mean: vec![0.0; len], m2: vec![0.0; len] }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn push(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.mean.len(), "observation length changed");
        self.count += 1;
        let n = self.count as f64;
        for ((m, q), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *q += d * (v - *m);
        }
    }

    pub fn merge(&mut self, other: &VecWelford) {
        assert_eq!(self.len(), other.len());
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let d = other.mean[i] - self.mean[i];
            self.mean[i] += d * nb / n;
            self.m2[i] += other.m2[i] + d * d * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self, i: usize) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2[i] / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean of component `i`.
    pub fn std_error(&self, i: usize) -> f64 {
        if self.count == 0 {
            return 0.0;
        }
        (self.variance(i) / self.count as f64).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_two_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3 + 1e6).collect();
        let mut w = VecWelford::new(1);
        xs.iter().for_each(|x| w.push(&[*x]));
        let mean = xs.iter().sum::<f64>() / 100.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 99.0;
        assert!((w.mean()[0] - mean).abs() < 1e-9);
        assert!((w.variance(0) - var).abs() < 1e-8);
    }

    #[test]
    fn merge_equals_sequential() {
        let xs: Vec<[f64; 2]> = (0..57).map(|i| [i as f64, (i as f64).sin()]).collect();
        let mut all = VecWelford::new(2);
        xs.iter().for_each(|x| all.push(x));
        let mut a = VecWelford::new(2);
        let mut b = VecWelford::new(2);
        xs[..20].iter().for_each(|x| a.push(x));
        xs[20..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        for i in 0..2 {
            assert!((a.mean()[i] - all.mean()[i]).abs() < 1e-12);
            assert!((a.variance(i) - all.variance(i)).abs() < 1e-10);
        }
        assert_eq!(a.count(), 57);
    }
}
