//! Central finite-difference checks for 64-bit layers and networks.

/// Norm-wise relative error `max|a - n| / max(max|a|, max|n|)`; zero when both vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max);
    let scale = analytic
        .iter()
        .chain(numeric)
        .map(|v| v.abs())
        .fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Central difference `(f(x + h e_i) - f(x - h e_i)) / 2h` for each index in `indices`.
pub fn numeric_gradient(
    x: &mut [f64],
    indices: &[usize],
    h: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    indices
        .iter()
        .map(|&i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(x);
            x[i] = orig - h;
            let down = f(x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Up to `max` indices spread evenly over `0..len`.
pub fn sample_indices(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    (0..max).map(|k| k * len / max).collect()
}
