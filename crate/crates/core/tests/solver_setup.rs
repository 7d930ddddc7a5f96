use ussi_core::medium::*;
use ussi_core::solver::*;

/// Plain DFT magnitude at frequency `f` (test oracle, independent of any FFT).
fn dft_mag(x: &[f64], fs: f64, f: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f / fs;
    let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, v)| {
        (re + v * (w * k as f64).cos(), im - v * (w * k as f64).sin())
    });
    (re * re + im * im).sqrt()
}

#[test]
fn stencils_are_consistent() {
    for order in [4, 6, 8] {
        let c = stencil_coefficients(order).unwrap();
        // exact on linear functions: sum c_m (2m - 1) = 1
        let s: f64 = c.iter().enumerate().map(|(m, v)| v * (2 * m + 1) as f64).sum();
        assert!((s - 1.0).abs() < 1e-14);
        // and on cubics
        let s3: f64 = c.iter().enumerate().map(|(m, v)| v * ((2 * m + 1) as f64).powi(3)).sum();
        assert!(s3.abs() < 1e-12);
    }
    assert!(stencil_coefficients(5).is_err());
}

#[test]
fn pulse_length_and_peak() {
    let p = make_pulse(5e6, 3, 80e6).unwrap();
    assert_eq!(p.len(), 48);
    let peak = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!((peak - 1.0).abs() < 1e-15);
}

#[test]
fn pulse_zero_mean() {
    for fs in [20e6, 49.3e6, 80e6, 123.3e6] {
        let p = make_pulse(5e6, 3, fs).unwrap();
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        assert!(mean.abs() < 1e-3, "fs {fs}: mean {mean}");
    }
}

#[test]
fn pulse_spectral_peak() {
    let fs = 80e6;
    let p = make_pulse(5e6, 3, fs).unwrap();
    // scan 0.05 MHz steps between 1 and 10 MHz
    let (best, _) = (20..=200)
        .map(|k| k as f64 * 0.05e6)
        .map(|f| (f, dft_mag(&p, fs, f)))
        .fold((0.0, 0.0), |acc, (f, m)| if m > acc.1 { (f, m) } else { acc });
    assert!((best - 5e6).abs() <= 0.02 * 5e6, "spectral peak at {best}");
}

#[test]
fn pulse_rejects_aliasing_and_zero_cycles() {
    assert!(make_pulse(5e6, 3, 15e6).is_err());
    assert!(make_pulse(5e6, 0, 80e6).is_err());
}

fn desk_probe() -> (SimGrid, Probe) {
    let g = SimGrid::desk();
    let p = Probe::desk(&g);
    (g, p)
}

#[test]
fn normal_incidence_has_zero_delays() {
    let (_, p) = desk_probe();
    let d = plane_wave_delays(0.0, &p, (16, 47), 1540.0).unwrap();
    assert!(d.iter().all(|&v| v == 0.0));
}

#[test]
fn max_delay_matches_tilted_wavefront() {
    let (_, p) = desk_probe();
    let theta = 14f64.to_radians();
    let d = plane_wave_delays(theta, &p, (0, 31), 1540.0).unwrap();
    let width = 31.0 * p.pitch;
    let max = d.iter().copied().fold(0.0, f64::max);
    assert!((max - width * theta.sin() / 1540.0).abs() < 1e-12);
    assert_eq!(d.iter().copied().fold(f64::INFINITY, f64::min), 0.0);
    // positive angle fires the left element first
    assert_eq!(d[0], 0.0);
}

#[test]
fn opposite_angles_mirror_delays() {
    let (_, p) = desk_probe();
    let a = plane_wave_delays(0.3, &p, (10, 40), 1540.0).unwrap();
    let b = plane_wave_delays(-0.3, &p, (10, 40), 1540.0).unwrap();
    for (x, y) in a.iter().zip(b.iter().rev()) {
        assert!((x - y).abs() < 1e-18);
    }
}

#[test]
fn delay_argument_errors() {
    let (_, p) = desk_probe();
    assert!(plane_wave_delays(0.0, &p, (5, 4), 1540.0).is_err());
    assert!(plane_wave_delays(0.0, &p, (0, 64), 1540.0).is_err());
    assert!(plane_wave_delays(1.1, &p, (0, 10), 1540.0).is_err());
}

#[test]
fn standard_events_cover_half_the_probe() {
    let (g, p) = desk_probe();
    let events = standard_events(&p, &g, &TransmitConfig::default()).unwrap();
    assert_eq!(events.len(), 3);
    assert_eq!(events[0].active, (0, 31));
    assert_eq!(events[1].active, (16, 47));
    assert_eq!(events[2].active, (32, 63));
    for e in &events {
        e.validate(&p).unwrap();
    }
}

#[test]
fn pulse_interpolation() {
    let e = TransmitEvent {
        angle: 0.0,
        active: (0, 0),
        delays: vec![0.0],
        pulse: vec![0.0, 1.0, 0.0],
        pulse_sample_rate: 1.0,
        label: TransmitLabel::Center,
    };
    assert_eq!(e.pulse_at(-0.5), 0.0);
    assert_eq!(e.pulse_at(0.5), 0.5);
    assert_eq!(e.pulse_at(1.0), 1.0);
    assert_eq!(e.pulse_at(2.0), 0.0);
    assert_eq!(e.pulse_at(2.5), 0.0);
}
