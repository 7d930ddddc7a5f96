//! Staggered-grid pressure/velocity time stepping.
//!
//! Pressure lives on integer nodes `(row, col)`, `vx` on `(row, col + 1/2)` and
//! `vz` on `(row + 1/2, col)`. Fields carry a halo of zeros as wide as half the
//! stencil, which acts as a pressure-release wall behind the absorbing layer.
//! Pressure is split into `px + pz` everywhere so the same update runs inside
//! and outside the PML.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::medium::MediumMap;

/// Reflection target used to size the PML damping profile.
const PML_REFLECTION: f64 = 1e-5;

/// Nepers per decibel.
const NP_PER_DB: f64 = std::f64::consts::LN_10 / 20.0;

/// Additive pressure source over a set of grid nodes.
#[derive(Debug, Clone)]
pub struct Source {
    /// `(row, col)` nodes driven by the waveform.
    pub nodes: Vec<(usize, usize)>,
    /// Pressure increment injected at each step, one value per step.
    pub waveform: Vec<f64>,
}

/// Receiver recording the mean pressure over a set of nodes.
#[derive(Debug, Clone)]
pub struct Sensor {
    pub nodes: Vec<(usize, usize)>,
}

/// Wavefield plus the per-node update coefficients for one medium.
pub struct Simulation {
    nx: usize,
    nz: usize,
    halo: usize,
    stride: usize,
    coeffs: Vec<f64>,
    pml: usize,
    p: Vec<f64>,
    px: Vec<f64>,
    pz: Vec<f64>,
    vx: Vec<f64>,
    vz: Vec<f64>,
    // Update coefficients, unpadded row-major nz x nx.
    vx_decay: Vec<f64>,
    vx_gain: Vec<f64>,
    vz_decay: Vec<f64>,
    vz_gain: Vec<f64>,
    px_decay: Vec<f64>,
    pz_decay: Vec<f64>,
    p_gain_x: Vec<f64>,
    p_gain_z: Vec<f64>,
    // Energy weights: 1/(2K) at nodes, rho/2 at staggered points.
    compliance: Vec<f64>,
    rho_x: Vec<f64>,
    rho_z: Vec<f64>,
    step: usize,
}

/// PML damping at fractional position `pos` (grid units) along an axis of `n` nodes.
fn pml_sigma(pos: f64, n: usize, thickness: usize, sigma_max: f64) -> f64 {
    let l = thickness as f64;
    let far = (n - 1) as f64 - l;
    let depth = if pos < l {
        l - pos
    } else if pos > far {
        pos - far
    } else {
        return 0.0;
    };
    sigma_max * (depth / l).min(1.0).powi(2)
}

impl Simulation {
    pub fn new(medium: &MediumMap) -> Result<Self> {
        medium.validate()?;
        let grid = &medium.grid;
        let c_max = medium.max_speed();
        grid.validate(c_max)?;
        let coeffs = super::stencil_coefficients(grid.fd_order)?;
        let (nx, nz, dx, dt) = (grid.nx, grid.nz, grid.dx, grid.dt);
        let halo = coeffs.len();
        let stride = nx + 2 * halo;
        let padded = stride * (nz + 2 * halo);

        let pml = grid.pml_thickness;
        let sigma_max = 3.0 * c_max * (1.0 / PML_REFLECTION).ln() / (2.0 * pml as f64 * dx);
        let alpha = medium.attenuation_db_per_cm * 100.0 * NP_PER_DB;

        let n = nx * nz;
        let mut sim = Self {
            nx,
            nz,
            halo,
            stride,
            coeffs,
            pml,
            p: vec![0.0; padded],
            px: vec![0.0; padded],
            pz: vec![0.0; padded],
            vx: vec![0.0; padded],
            vz: vec![0.0; padded],
            vx_decay: vec![0.0; n],
            vx_gain: vec![0.0; n],
            vz_decay: vec![0.0; n],
            vz_gain: vec![0.0; n],
            px_decay: vec![0.0; n],
            pz_decay: vec![0.0; n],
            p_gain_x: vec![0.0; n],
            p_gain_z: vec![0.0; n],
            compliance: vec![0.0; n],
            rho_x: vec![0.0; n],
            rho_z: vec![0.0; n],
            step: 0,
        };

        let decay_gain = |s: f64| {
            let den = 1.0 + 0.5 * s * dt;
            ((1.0 - 0.5 * s * dt) / den, dt / den)
        };
        for row in 0..nz {
            let sz_node = pml_sigma(row as f64, nz, pml, sigma_max);
            let sz_half = pml_sigma(row as f64 + 0.5, nz, pml, sigma_max);
            for col in 0..nx {
                let i = row * nx + col;
                let sx_node = pml_sigma(col as f64, nx, pml, sigma_max);
                let sx_half = pml_sigma(col as f64 + 0.5, nx, pml, sigma_max);
                let c = medium.speed[i];
                let rho = medium.density[i];
                let bulk = rho * c * c;

                // staggered neighbours fall back to the node itself at the last row/column
                let right = if col + 1 < nx { i + 1 } else { i };
                let below = if row + 1 < nz { i + nx } else { i };
                let rho_x = 0.5 * (rho + medium.density[right]);
                let rho_z = 0.5 * (rho + medium.density[below]);
                let c_x = 0.5 * (c + medium.speed[right]);
                let c_z = 0.5 * (c + medium.speed[below]);

                // velocity past the last node stays zero, like the halo before the first
                let (a, b) = decay_gain(sx_half + alpha * c_x);
                (sim.vx_decay[i], sim.vx_gain[i]) = if col + 1 < nx { (a, b / (rho_x * dx)) } else { (0.0, 0.0) };
                let (a, b) = decay_gain(sz_half + alpha * c_z);
                (sim.vz_decay[i], sim.vz_gain[i]) = if row + 1 < nz { (a, b / (rho_z * dx)) } else { (0.0, 0.0) };
                let (a, b) = decay_gain(sx_node + alpha * c);
                sim.px_decay[i] = a;
                sim.p_gain_x[i] = b * bulk / dx;
                let (a, b) = decay_gain(sz_node + alpha * c);
                sim.pz_decay[i] = a;
                sim.p_gain_z[i] = b * bulk / dx;

                sim.compliance[i] = 0.5 / bulk;
                sim.rho_x[i] = 0.5 * rho_x;
                sim.rho_z[i] = 0.5 * rho_z;
            }
        }
        Ok(sim)
    }

    #[inline]
    fn padded(&self, row: usize, col: usize) -> usize {
        (row + self.halo) * self.stride + col + self.halo
    }

    /// Steps taken so far.
    pub fn current_step(&self) -> usize {
        self.step
    }

    pub fn pressure(&self, row: usize, col: usize) -> f64 {
        self.p[self.padded(row, col)]
    }

    /// Adds `amount` of pressure at a node, split evenly over both field components.
    pub fn add_pressure(&mut self, row: usize, col: usize, amount: f64) {
        let k = self.padded(row, col);
        self.px[k] += 0.5 * amount;
        self.pz[k] += 0.5 * amount;
        self.p[k] += amount;
    }

    /// Acoustic energy (per unit cell area) in the region outside the PML.
    pub fn interior_energy(&self) -> f64 {
        let l = self.pml;
        let mut e = 0.0;
        for row in l..self.nz - l {
            for col in l..self.nx - l {
                let i = row * self.nx + col;
                let k = self.padded(row, col);
                e += self.compliance[i] * self.p[k] * self.p[k]
                    + self.rho_x[i] * self.vx[k] * self.vx[k]
                    + self.rho_z[i] * self.vz[k] * self.vz[k];
            }
        }
        e
    }

    /// Advances velocity then pressure by one time step.
    pub fn advance(&mut self) {
        match self.coeffs.len() {
            2 => self.advance_with::<2>(),
            3 => self.advance_with::<3>(),
            4 => self.advance_with::<4>(),
            _ => unreachable!("stencil order validated at construction"),
        }
        self.step += 1;
    }

    fn advance_with<const M: usize>(&mut self) {
        let mut c = [0.0; M];
        c.copy_from_slice(&self.coeffs);
        let (nx, nz, halo, stride) = (self.nx, self.nz, self.halo, self.stride);

        // velocity from the pressure gradient
        {
            let p = &self.p;
            let (vx_decay, vx_gain) = (&self.vx_decay, &self.vx_gain);
            let (vz_decay, vz_gain) = (&self.vz_decay, &self.vz_gain);
            self.vx
                .par_chunks_mut(stride)
                .zip(self.vz.par_chunks_mut(stride))
                .enumerate()
                .skip(halo)
                .take(nz)
                .for_each_init(
                    || (vec![0.0; nx], vec![0.0; nx]),
                    |(gx, gz), (prow, (vx_row, vz_row))| {
                        let base = prow * stride + halo;
                        gx.iter_mut().for_each(|v| *v = 0.0);
                        gz.iter_mut().for_each(|v| *v = 0.0);
                        for (m, &cm) in c.iter().enumerate() {
                            let hi = &p[base + m + 1..][..nx];
                            let lo = &p[base - m..][..nx];
                            for ((g, a), b) in gx.iter_mut().zip(hi).zip(lo) {
                                *g += cm * (a - b);
                            }
                            let hi = &p[base + (m + 1) * stride..][..nx];
                            let lo = &p[base - m * stride..][..nx];
                            for ((g, a), b) in gz.iter_mut().zip(hi).zip(lo) {
                                *g += cm * (a - b);
                            }
                        }
                        let cb = (prow - halo) * nx;
                        let r = cb..cb + nx;
                        let row = &mut vx_row[halo..halo + nx];
                        for (((v, a), b), g) in row.iter_mut().zip(&vx_decay[r.clone()]).zip(&vx_gain[r.clone()]).zip(gx.iter()) {
                            *v = a * *v - b * g;
                        }
                        let row = &mut vz_row[halo..halo + nx];
                        for (((v, a), b), g) in row.iter_mut().zip(&vz_decay[r.clone()]).zip(&vz_gain[r.clone()]).zip(gz.iter()) {
                            *v = a * *v - b * g;
                        }
                    },
                );
        }

        // pressure from the velocity divergence
        {
            let (vx, vz) = (&self.vx, &self.vz);
            let (px_decay, pz_decay) = (&self.px_decay, &self.pz_decay);
            let (gain_x, gain_z) = (&self.p_gain_x, &self.p_gain_z);
            self.p
                .par_chunks_mut(stride)
                .zip(self.px.par_chunks_mut(stride))
                .zip(self.pz.par_chunks_mut(stride))
                .enumerate()
                .skip(halo)
                .take(nz)
                .for_each_init(
                    || (vec![0.0; nx], vec![0.0; nx]),
                    |(dvx, dvz), (prow, ((p_row, px_row), pz_row))| {
                        let base = prow * stride + halo;
                        dvx.iter_mut().for_each(|v| *v = 0.0);
                        dvz.iter_mut().for_each(|v| *v = 0.0);
                        for (m, &cm) in c.iter().enumerate() {
                            let hi = &vx[base + m..][..nx];
                            let lo = &vx[base - m - 1..][..nx];
                            for ((g, a), b) in dvx.iter_mut().zip(hi).zip(lo) {
                                *g += cm * (a - b);
                            }
                            let hi = &vz[base + m * stride..][..nx];
                            let lo = &vz[base - (m + 1) * stride..][..nx];
                            for ((g, a), b) in dvz.iter_mut().zip(hi).zip(lo) {
                                *g += cm * (a - b);
                            }
                        }
                        let cb = (prow - halo) * nx;
                        let r = cb..cb + nx;
                        let px_row = &mut px_row[halo..halo + nx];
                        for (((v, a), b), g) in px_row.iter_mut().zip(&px_decay[r.clone()]).zip(&gain_x[r.clone()]).zip(dvx.iter()) {
                            *v = a * *v - b * g;
                        }
                        let pz_row = &mut pz_row[halo..halo + nx];
                        for (((v, a), b), g) in pz_row.iter_mut().zip(&pz_decay[r.clone()]).zip(&gain_z[r.clone()]).zip(dvz.iter()) {
                            *v = a * *v - b * g;
                        }
                        for ((v, a), b) in p_row[halo..halo + nx].iter_mut().zip(px_row.iter()).zip(pz_row.iter()) {
                            *v = a + b;
                        }
                    },
                );
        }
    }

    /// Index of the first non-finite pressure sample, if any.
    fn first_non_finite(&self) -> Option<usize> {
        self.p.iter().position(|v| !v.is_finite())
    }

    /// Runs `n_steps` steps with the given sources and sensors and returns one
    /// trace per sensor. `observer` sees the state after each recorded sample.
    pub fn run(
        &mut self,
        n_steps: usize,
        sources: &[Source],
        sensors: &[Sensor],
        check_every: usize,
        mut observer: impl FnMut(usize, &Simulation),
    ) -> Result<Vec<Vec<f64>>> {
        let sensor_idx: Vec<Vec<usize>> = sensors
            .iter()
            .map(|s| s.nodes.iter().map(|&(r, c)| self.padded(r, c)).collect())
            .collect();
        let mut traces = vec![vec![0.0; n_steps]; sensors.len()];
        let inject = |sim: &mut Simulation, step: usize| {
            for src in sources {
                if let Some(&v) = src.waveform.get(step) {
                    if v != 0.0 {
                        for &(r, c) in &src.nodes {
                            sim.add_pressure(r, c, v);
                        }
                    }
                }
            }
        };
        inject(self, 0);
        for step in 0..n_steps {
            for (trace, idx) in traces.iter_mut().zip(&sensor_idx) {
                let sum: f64 = idx.iter().map(|&k| self.p[k]).sum();
                trace[step] = sum / idx.len().max(1) as f64;
            }
            observer(step, self);
            if step + 1 == n_steps {
                break;
            }
            self.advance();
            inject(self, step + 1);
            if check_every > 0 && (step + 1) % check_every == 0 {
                if let Some(k) = self.first_non_finite() {
                    let row = k / self.stride;
                    let col = k % self.stride;
                    return Err(Error::Divergence {
                        step: step + 1,
                        detail: format!(
                            "non-finite pressure near row {}, col {}",
                            row.saturating_sub(self.halo),
                            col.saturating_sub(self.halo)
                        ),
                    });
                }
            }
        }
        if traces.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: n_steps,
                detail: "non-finite sensor sample".into(),
            });
        }
        Ok(traces)
    }
}
