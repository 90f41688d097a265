use ndarray::Array2;

use crate::scalar::Scalar;

/// Fixed 2D sine–cosine table of shape (grid_h·grid_w, dim): the first half of
/// each row encodes the token row, the second half the token column.
/// `dim` must be divisible by 4.
pub fn sincos_2d<T: Scalar>(grid_h: usize, grid_w: usize, dim: usize) -> Array2<T> {
    debug_assert!(dim % 4 == 0);
    let quarter = dim / 4;
    let omega: Vec<f64> = (0..quarter)
        .map(|k| 1.0 / 10_000f64.powf(k as f64 / quarter as f64))
        .collect();
    Array2::from_shape_fn((grid_h * grid_w, dim), |(tok, c)| {
        let (pos, c) = if c < dim / 2 {
            ((tok / grid_w) as f64, c)
        } else {
            ((tok % grid_w) as f64, c - dim / 2)
        };
        let angle = pos * omega[c % quarter];
        T::of(if c < quarter { angle.sin() } else { angle.cos() })
    })
}
