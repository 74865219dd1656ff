//! Seeded synthetic weights for tests, benchmarks and demos.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::types::DenseMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec<R: Rng>(rng: &mut R, len: usize) -> Vec<f32> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

/// Unit-Gaussian matrix.
pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
    let mut rng = rng(seed);
    DenseMatrix::new(rows, cols, gaussian_vec(&mut rng, rows * cols))
        .expect("gaussian samples are finite")
}

/// Overwrites `round(fraction * len)` distinct positions with values of
/// random sign and magnitude uniform in `[min_mag, max_mag)`.
///
/// Returns the new matrix and the planted `(row, col)` positions in
/// row-major order.
pub fn plant_outliers(
    w: &DenseMatrix,
    fraction: f64,
    min_mag: f32,
    max_mag: f32,
    seed: u64,
) -> (DenseMatrix, Vec<(usize, usize)>) {
    let mut rng = rng(seed);
    let len = w.len();
    let count = ((fraction * len as f64).round() as usize).min(len);
    let mut picks = index::sample(&mut rng, len, count).into_vec();
    picks.sort_unstable();

    let mut data = w.data().to_vec();
    for &i in &picks {
        let mag = rng.gen_range(min_mag..max_mag);
        data[i] = if rng.gen::<bool>() { mag } else { -mag };
    }
    let positions = picks
        .iter()
        .map(|&i| (i / w.cols(), i % w.cols()))
        .collect();
    let planted = DenseMatrix::new(w.rows(), w.cols(), data).expect("planted values are finite");
    (planted, positions)
}

/// Gaussian matrix with a planted fraction of large-magnitude outliers.
pub fn planted_matrix(
    rows: usize,
    cols: usize,
    fraction: f64,
    min_mag: f32,
    max_mag: f32,
    seed: u64,
) -> (DenseMatrix, Vec<(usize, usize)>) {
    let base = gaussian_matrix(rows, cols, seed);
    plant_outliers(
        &base,
        fraction,
        min_mag,
        max_mag,
        seed ^ 0x9e37_79b9_7f4a_7c15,
    )
}
