use crate::types::{DenseMatrix, TensorStats};

/// Compensated (Neumaier) running sum in `f64`.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Accumulator {
    sum: f64,
    comp: f64,
}

impl Accumulator {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Mean, population standard deviation and max magnitude over every element.
///
/// Two passes in element order with compensated `f64` sums, so the result
/// does not depend on how callers schedule work.
pub fn tensor_stats(w: &DenseMatrix) -> TensorStats {
    let data = w.data();
    let count = data.len();

    let mut sum = Accumulator::default();
    let mut max_abs = 0.0f64;
    for &x in data {
        let x = x as f64;
        sum.add(x);
        max_abs = max_abs.max(x.abs());
    }
    let mean = sum.total() / count as f64;

    let mut sq = Accumulator::default();
    for &x in data {
        let d = x as f64 - mean;
        sq.add(d * d);
    }
    let std = (sq.total() / count as f64).max(0.0).sqrt();

    TensorStats {
        mean,
        std,
        max_abs,
        count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::gaussian_matrix;

    /// Plain two-pass reference without compensation.
    fn reference(data: &[f32]) -> (f64, f64) {
        let n = data.len() as f64;
        let mean = data.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = data.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    #[test]
    fn zero_matrix() {
        let s = tensor_stats(&DenseMatrix::zeros(2, 2).unwrap());
        assert_eq!((s.mean, s.std, s.max_abs, s.count), (0.0, 0.0, 0.0, 4));
    }

    #[test]
    fn single_spike() {
        let w = DenseMatrix::new(1, 5, vec![0.0, 0.0, 0.0, 0.0, 100.0]).unwrap();
        let s = tensor_stats(&w);
        assert_eq!(s.mean, 20.0);
        assert_eq!(s.std, 40.0);
        assert_eq!(s.max_abs, 100.0);
    }

    #[test]
    fn negative_max_abs() {
        let w = DenseMatrix::new(1, 3, vec![1.0, -7.5, 2.0]).unwrap();
        assert_eq!(tensor_stats(&w).max_abs, 7.5);
    }

    #[test]
    fn million_gaussian_samples() {
        let w = gaussian_matrix(1000, 1000, 7);
        let s = tensor_stats(&w);
        assert!(s.mean.abs() < 0.005, "mean {}", s.mean);
        assert!((0.99..=1.01).contains(&s.std), "std {}", s.std);
        let (mean, std) = reference(w.data());
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.std - std).abs() / std < 1e-12);
    }

    #[test]
    fn shuffle_changes_mean_negligibly() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;

        let w = gaussian_matrix(1000, 1000, 11);
        let mut shuffled = w.data().to_vec();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let a = tensor_stats(&w);
        let b = tensor_stats(&DenseMatrix::new(1000, 1000, shuffled).unwrap());
        assert!((a.mean - b.mean).abs() <= 1e-9 * a.mean.abs());
        assert!((a.std - b.std).abs() <= 1e-12 * a.std);
    }

    #[test]
    fn std_scales_with_constant() {
        // Powers of two keep c * W exact in f32, so only the statistic itself
        // can introduce error.
        let w = gaussian_matrix(64, 48, 5);
        let base = tensor_stats(&w).std;
        for c in [-2.0f32, 0.5, 4.0, -0.125, 1024.0] {
            let scaled = tensor_stats(&w.affine(c, 0.0).unwrap()).std;
            let expect = c.abs() as f64 * base;
            assert!((scaled - expect).abs() <= 1e-12 * expect, "c={c}");
        }
    }
}
