//! Plane-wave transmission and channel-data recording on top of the
//! finite-difference wave solver.

mod fdtd;

pub use fdtd::{Sensor, Simulation, Source};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::medium::{MediumMap, Probe, SimGrid, C_REF};

/// Staggered first-derivative weights `c_m` for offsets `m - 1/2`, m = 1..order/2.
pub fn stencil_coefficients(order: usize) -> Result<Vec<f64>> {
    match order {
        4 => Ok(vec![9.0 / 8.0, -1.0 / 24.0]),
        6 => Ok(vec![75.0 / 64.0, -25.0 / 384.0, 3.0 / 640.0]),
        8 => Ok(vec![1225.0 / 1024.0, -245.0 / 3072.0, 49.0 / 5120.0, -5.0 / 7168.0]),
        _ => Err(Error::Config(format!("unsupported finite-difference order {order} (use 4, 6 or 8)"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransmitLabel {
    Left,
    Center,
    Right,
}

impl TransmitLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            TransmitLabel::Left => "left",
            TransmitLabel::Center => "center",
            TransmitLabel::Right => "right",
        }
    }
}

/// One plane-wave firing.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitEvent {
    /// Steering angle, radians; positive tilts the wavefront toward +x.
    pub angle: f64,
    /// Inclusive range of firing elements.
    pub active: (usize, usize),
    /// Firing delay per active element, seconds.
    pub delays: Vec<f64>,
    /// Excitation waveform, peak amplitude 1.
    pub pulse: Vec<f64>,
    pub pulse_sample_rate: f64,
    pub label: TransmitLabel,
}

impl TransmitEvent {
    pub fn validate(&self, probe: &Probe) -> Result<()> {
        let (first, last) = self.active;
        if first > last || last >= probe.n_elements {
            return Err(Error::Argument(format!(
                "active elements [{first}, {last}] invalid for {} elements",
                probe.n_elements
            )));
        }
        if self.delays.len() != last - first + 1 {
            return Err(Error::Argument("one delay per active element required".into()));
        }
        let min = self.delays.iter().copied().fold(f64::INFINITY, f64::min);
        if min != 0.0 {
            return Err(Error::Argument("transmit delays must have minimum exactly 0".into()));
        }
        if !(self.pulse_sample_rate > 0.0) {
            return Err(Error::Argument("pulse sample rate must be positive".into()));
        }
        Ok(())
    }

    /// Pulse value at time `t` seconds after its first sample, linear interpolation.
    pub fn pulse_at(&self, t: f64) -> f64 {
        let pos = t * self.pulse_sample_rate;
        if pos < 0.0 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        match (self.pulse.get(i), self.pulse.get(i + 1)) {
            (Some(&a), Some(&b)) => a + (b - a) * frac,
            (Some(&a), None) if frac == 0.0 => a,
            _ => 0.0,
        }
    }
}

/// Transmit settings shared by every event of a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransmitConfig {
    /// Steering magnitude for the edge plane waves, degrees.
    pub steer_angle_deg: f64,
    pub n_cycles: usize,
    /// Fraction of the probe that fires in each event.
    pub aperture_fraction: f64,
    /// Speed assumed when computing delays, m/s.
    pub c_ref: f64,
}

impl Default for TransmitConfig {
    fn default() -> Self {
        Self {
            steer_angle_deg: 14.0,
            n_cycles: 3,
            aperture_fraction: 0.5,
            c_ref: C_REF,
        }
    }
}

/// Firing delays that tilt the emitted wavefront by `angle`.
///
/// Returns one delay per element of `active`, `(x_i - x_pivot) sin(angle) / c_ref`
/// shifted so the smallest is exactly zero.
pub fn plane_wave_delays(angle: f64, probe: &Probe, active: (usize, usize), c_ref: f64) -> Result<Vec<f64>> {
    let (first, last) = active;
    if first > last || last >= probe.n_elements {
        return Err(Error::Argument(format!("empty or out-of-range active aperture [{first}, {last}]")));
    }
    if !(angle.abs() < std::f64::consts::FRAC_PI_3) {
        return Err(Error::Argument(format!("steering angle {angle} rad must satisfy |angle| < pi/3")));
    }
    if !(c_ref > 0.0) {
        return Err(Error::Argument("c_ref must be positive".into()));
    }
    let s = angle.sin();
    let pivot = if s >= 0.0 { probe.element_x(first) } else { probe.element_x(last) };
    let raw: Vec<f64> = (first..=last).map(|k| (probe.element_x(k) - pivot) * s / c_ref).collect();
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(raw.into_iter().map(|d| d - min).collect())
}

/// Gaussian-windowed tone burst of `n_cycles` periods, normalized to peak 1.
///
/// The window has standard deviation `n_cycles / (6 f)` and is centered on the
/// burst, so the samples are antisymmetric and sum to zero.
pub fn make_pulse(center_frequency: f64, n_cycles: usize, sample_rate: f64) -> Result<Vec<f64>> {
    if n_cycles < 1 {
        return Err(Error::Argument("pulse needs at least one cycle".into()));
    }
    if !(center_frequency > 0.0) {
        return Err(Error::Argument("center frequency must be positive".into()));
    }
    if sample_rate < 4.0 * center_frequency {
        return Err(Error::Argument(format!(
            "sample rate {sample_rate} Hz aliases a {center_frequency} Hz pulse (needs >= 4x)"
        )));
    }
    let n = ((n_cycles as f64 * sample_rate / center_frequency).round() as usize).max(2);
    let sigma = n_cycles as f64 / (6.0 * center_frequency);
    let mid = (n as f64 - 1.0) / 2.0;
    let w = 2.0 * std::f64::consts::PI * center_frequency;
    let mut pulse: Vec<f64> = (0..n)
        .map(|k| {
            let t = (k as f64 - mid) / sample_rate;
            (w * t).sin() * (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let peak = pulse.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    pulse.iter_mut().for_each(|v| *v /= peak);
    Ok(pulse)
}

/// Time of the pulse envelope center after its first sample, seconds.
pub fn pulse_center_time(pulse_len: usize, sample_rate: f64) -> f64 {
    (pulse_len as f64 - 1.0) / (2.0 * sample_rate)
}

/// The left / center / right plane waves used for every sample.
pub fn standard_events(probe: &Probe, grid: &SimGrid, cfg: &TransmitConfig) -> Result<Vec<TransmitEvent>> {
    let n = probe.n_elements;
    let half = ((n as f64 * cfg.aperture_fraction).round() as usize).clamp(1, n);
    let quarter = (n - half) / 2;
    let theta = cfg.steer_angle_deg.to_radians();
    let pulse = make_pulse(probe.center_frequency, cfg.n_cycles, grid.sample_rate())?;
    [
        (TransmitLabel::Left, (0, half - 1), theta),
        (TransmitLabel::Center, (quarter, quarter + half - 1), 0.0),
        (TransmitLabel::Right, (n - half, n - 1), -theta),
    ]
    .into_iter()
    .map(|(label, active, angle)| {
        Ok(TransmitEvent {
            angle,
            active,
            delays: plane_wave_delays(angle, probe, active, cfg.c_ref)?,
            pulse: pulse.clone(),
            pulse_sample_rate: grid.sample_rate(),
            label,
        })
    })
    .collect()
}

/// Received pressure for one transmit, row-major `n_elements x n_time`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmitTraces {
    pub n_elements: usize,
    pub n_time: usize,
    pub sample_rate: f64,
    pub data: Vec<f64>,
}

impl TransmitTraces {
    pub fn trace(&self, element: usize) -> &[f64] {
        &self.data[element * self.n_time..(element + 1) * self.n_time]
    }
}

/// Channel data for a full study, `n_transmits x n_elements x n_time`, stored as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelData {
    pub n_transmits: usize,
    pub n_elements: usize,
    pub n_time: usize,
    /// Hz.
    pub sample_rate: f64,
    pub traces: Vec<f32>,
}

impl ChannelData {
    pub fn zeros(n_transmits: usize, n_elements: usize, n_time: usize, sample_rate: f64) -> Self {
        Self {
            n_transmits,
            n_elements,
            n_time,
            sample_rate,
            traces: vec![0.0; n_transmits * n_elements * n_time],
        }
    }

    pub fn trace(&self, transmit: usize, element: usize) -> &[f32] {
        let start = (transmit * self.n_elements + element) * self.n_time;
        &self.traces[start..start + self.n_time]
    }

    pub fn trace_mut(&mut self, transmit: usize, element: usize) -> &mut [f32] {
        let start = (transmit * self.n_elements + element) * self.n_time;
        &mut self.traces[start..start + self.n_time]
    }

    /// Keeps only the listed transmits, in the given order.
    pub fn select_transmits(&self, transmits: &[usize]) -> Result<Self> {
        let per = self.n_elements * self.n_time;
        let mut traces = Vec::with_capacity(transmits.len() * per);
        for &t in transmits {
            if t >= self.n_transmits {
                return Err(Error::Bounds(format!("transmit {t} of {}", self.n_transmits)));
            }
            traces.extend_from_slice(&self.traces[t * per..(t + 1) * per]);
        }
        Ok(Self {
            n_transmits: transmits.len(),
            n_elements: self.n_elements,
            n_time: self.n_time,
            sample_rate: self.sample_rate,
            traces,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.traces.len() != self.n_transmits * self.n_elements * self.n_time {
            return Err(Error::Schema("channel data length disagrees with its dims".into()));
        }
        if self.traces.iter().any(|v| !v.is_finite()) {
            return Err(Error::NotFinite("channel data contains non-finite samples".into()));
        }
        Ok(())
    }
}

/// Grid nodes covered by each probe element on the probe row.
pub fn element_nodes(probe: &Probe, grid: &SimGrid) -> Vec<Vec<(usize, usize)>> {
    let row = grid.probe_row();
    (0..probe.n_elements)
        .map(|k| probe.element_columns(k, grid).map(|col| (row, col)).collect())
        .collect()
}

/// Sources driving the active elements of `event`, one waveform sample per step.
pub fn event_sources(probe: &Probe, grid: &SimGrid, event: &TransmitEvent) -> Vec<Source> {
    let nodes = element_nodes(probe, grid);
    let (first, last) = event.active;
    (first..=last)
        .zip(&event.delays)
        .map(|(k, &delay)| Source {
            nodes: nodes[k].clone(),
            waveform: (0..grid.n_steps)
                .map(|step| event.pulse_at(step as f64 * grid.dt - delay))
                .collect(),
        })
        .collect()
}

/// Interval between divergence checks, steps.
const CHECK_EVERY: usize = 100;

/// Fires `event` into `medium` and records every element at every step.
pub fn simulate(medium: &MediumMap, probe: &Probe, event: &TransmitEvent) -> Result<TransmitTraces> {
    let grid = &medium.grid;
    probe.validate(grid)?;
    event.validate(probe)?;
    let mut sim = Simulation::new(medium)?;
    let sources = event_sources(probe, grid, event);
    let sensors: Vec<Sensor> = element_nodes(probe, grid)
        .into_iter()
        .map(|nodes| Sensor { nodes })
        .collect();
    let traces = sim.run(grid.n_steps, &sources, &sensors, CHECK_EVERY, |_, _| {})?;
    Ok(TransmitTraces {
        n_elements: probe.n_elements,
        n_time: grid.n_steps,
        sample_rate: grid.sample_rate(),
        data: traces.into_iter().flatten().collect(),
    })
}

/// Runs every event in order and stacks the results along the transmit axis.
pub fn simulate_study(medium: &MediumMap, probe: &Probe, events: &[TransmitEvent]) -> Result<ChannelData> {
    let grid = &medium.grid;
    let mut out = ChannelData::zeros(events.len(), probe.n_elements, grid.n_steps, grid.sample_rate());
    for (t, event) in events.iter().enumerate() {
        let tr = simulate(medium, probe, event)?;
        let per = probe.n_elements * grid.n_steps;
        out.traces[t * per..(t + 1) * per]
            .iter_mut()
            .zip(&tr.data)
            .for_each(|(o, &v)| *o = v as f32);
    }
    Ok(out)
}
