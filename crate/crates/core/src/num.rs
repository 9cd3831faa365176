//! Compensated summation and shared numeric helpers.
//!
//! Every estimator and variance accumulation in this crate sums through
//! [`KahanSum`] so that results do not depend on how work was batched, and the
//! Monte Carlo harness can assert bit-identical output across worker counts.

/// Neumaier-compensated accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn kahan_sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = KahanSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    kahan_sum(xs.iter().copied()) / xs.len() as f64
}

/// Two-pass sample variance with the n−1 divisor. Returns `None` for fewer
/// than two observations.
pub fn sample_variance(xs: &[f64]) -> Option<f64> {
    if xs.len() < 2 {
        return None;
    }
    let m = mean(xs);
    let ss = kahan_sum(xs.iter().map(|&x| (x - m) * (x - m)));
    Some(ss / (xs.len() - 1) as f64)
}

/// Sample covariance (n−1 divisor) of two equal-length slices.
pub fn sample_covariance(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return None;
    }
    let mx = mean(xs);
    let my = mean(ys);
    let ss = kahan_sum(xs.iter().zip(ys).map(|(&x, &y)| (x - mx) * (y - my)));
    Some(ss / (xs.len() - 1) as f64)
}

/// Relative closeness helper used across tests and internal assertions.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs()).max(1e-300);
    (a - b).abs() / scale
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_beats_naive_on_cancellation() {
        // 1 + 1e16 - 1e16 repeated: naive summation loses the ones.
        let mut xs = Vec::new();
        for _ in 0..1000 {
            xs.push(1.0);
            xs.push(1e16);
            xs.push(-1e16);
        }
        assert_eq!(kahan_sum(xs.iter().copied()), 1000.0);
    }

    #[test]
    fn variance_matches_hand_computation() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&xs), 2.5);
        let v = sample_variance(&xs).unwrap();
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
        assert!(sample_variance(&[1.0]).is_none());
    }

    #[test]
    fn covariance_of_identical_series_is_variance() {
        let xs = [0.5, -1.5, 2.0, 0.25];
        let v = sample_variance(&xs).unwrap();
        let c = sample_covariance(&xs, &xs).unwrap();
        assert_eq!(v, c);
    }
}
