//! Trace measurements: analytic envelope and arrival picking.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Magnitude of the analytic signal (Hilbert envelope).
pub fn envelope(trace: &[f64]) -> Vec<f64> {
    let n = trace.len();
    if n == 0 {
        return Vec::new();
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = trace.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    // keep DC and Nyquist, double positive frequencies, zero negative ones
    let half = n / 2;
    for (k, v) in buf.iter_mut().enumerate() {
        if k == 0 || (n.is_multiple_of(2) && k == half) {
            continue;
        }
        if k < n.div_ceil(2) {
            *v *= 2.0;
        } else {
            *v = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf.iter().map(|v| v.norm() / n as f64).collect()
}

/// Sub-sample position of the largest value in `x[lo..hi]`, refined with a parabola.
pub fn peak_position(x: &[f64], lo: usize, hi: usize) -> Option<f64> {
    let hi = hi.min(x.len());
    if lo >= hi {
        return None;
    }
    let (i, _) = x[lo..hi]
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (k, &v)| if v > acc.1 { (k, v) } else { acc });
    let i = i + lo;
    if i == 0 || i + 1 >= x.len() {
        return Some(i as f64);
    }
    let (a, b, c) = (x[i - 1], x[i], x[i + 1]);
    let den = a - 2.0 * b + c;
    let shift = if den.abs() > 0.0 { 0.5 * (a - c) / den } else { 0.0 };
    Some(i as f64 + shift.clamp(-0.5, 0.5))
}

/// Time of the envelope maximum inside `[t_lo, t_hi)` seconds.
pub fn envelope_peak_time(trace: &[f64], sample_rate: f64, t_lo: f64, t_hi: f64) -> Option<f64> {
    let env = envelope(trace);
    let lo = (t_lo * sample_rate).max(0.0).floor() as usize;
    let hi = (t_hi * sample_rate).max(0.0).ceil() as usize;
    peak_position(&env, lo, hi).map(|p| p / sample_rate)
}

/// Largest envelope value inside `[t_lo, t_hi)` seconds.
pub fn envelope_peak_value(trace: &[f64], sample_rate: f64, t_lo: f64, t_hi: f64) -> f64 {
    let env = envelope(trace);
    let lo = (t_lo * sample_rate).max(0.0).floor() as usize;
    let hi = ((t_hi * sample_rate).ceil() as usize).min(env.len());
    env.get(lo..hi).map_or(0.0, |s| s.iter().copied().fold(0.0, f64::max))
}
