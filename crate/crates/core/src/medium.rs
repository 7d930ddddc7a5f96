//! Simulation grids, probe geometry, elastic relations and random tissue phantoms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::PortableRng;

/// Lowest and highest sound speed a [`MediumMap`] may hold, m/s.
pub const SPEED_BOUNDS: (f64, f64) = (1000.0, 2500.0);

/// Reference soft-tissue speed used for wavelengths and delays, m/s.
pub const C_REF: f64 = 1540.0;

/// Square-cell 2D grid plus its time discretization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimGrid {
    /// Lateral points.
    pub nx: usize,
    /// Depth points.
    pub nz: usize,
    /// Cell size, meters.
    pub dx: f64,
    /// Time step, seconds.
    pub dt: f64,
    pub n_steps: usize,
    pub pml_thickness: usize,
    /// Accuracy order of the staggered spatial derivative (4, 6 or 8).
    #[serde(default = "default_fd_order")]
    pub fd_order: usize,
}

fn default_fd_order() -> usize {
    8
}

/// Courant number used by the default grids (`dt = cfl * dx / c_max`).
pub const DEFAULT_CFL: f64 = 0.2;
/// Fastest speed the default grids are stable for, m/s.
pub const DEFAULT_C_MAX: f64 = 1800.0;

impl SimGrid {
    /// Builds a grid whose time step satisfies `dt = cfl * dx / c_max` and whose
    /// step count covers `duration` seconds.
    pub fn from_cfl(
        nx: usize,
        nz: usize,
        dx: f64,
        cfl: f64,
        c_max: f64,
        duration: f64,
        pml_thickness: usize,
    ) -> Self {
        let dt = cfl * dx / c_max;
        Self {
            nx,
            nz,
            dx,
            dt,
            n_steps: (duration / dt).ceil() as usize,
            pml_thickness,
            fd_order: default_fd_order(),
        }
    }

    /// 384 x 384 points at 73 um (2.8 cm square), 40 us of propagation.
    pub fn desk() -> Self {
        Self::from_cfl(384, 384, 7.3e-5, DEFAULT_CFL, DEFAULT_C_MAX, 40e-6, 20)
    }

    /// 1152 x 1152 points over 4.24 cm.
    pub fn full_scale() -> Self {
        Self::from_cfl(1152, 1152, 4.24e-2 / 1152.0, DEFAULT_CFL, DEFAULT_C_MAX, 60e-6, 24)
    }

    pub fn width(&self) -> f64 {
        self.nx as f64 * self.dx
    }

    pub fn depth(&self) -> f64 {
        self.nz as f64 * self.dx
    }

    pub fn cells(&self) -> usize {
        self.nx * self.nz
    }

    pub fn sample_rate(&self) -> f64 {
        1.0 / self.dt
    }

    /// Row on which the probe sits, the first row below the top absorbing layer.
    pub fn probe_row(&self) -> usize {
        self.pml_thickness
    }

    /// Largest admissible Courant number for the configured stencil (2D leapfrog).
    pub fn stability_limit(&self) -> f64 {
        let sum: f64 = crate::solver::stencil_coefficients(self.fd_order)
            .map(|c| c.iter().map(|v| v.abs()).sum())
            .unwrap_or(f64::INFINITY);
        1.0 / (std::f64::consts::SQRT_2 * sum)
    }

    /// Checks the static invariants and the CFL bound for `c_max`.
    pub fn validate(&self, c_max: f64) -> Result<()> {
        if !(self.dx > 0.0 && self.dt > 0.0) {
            return Err(Error::Config("grid dx and dt must be positive".into()));
        }
        if self.nx < 64 || self.nz < 64 {
            return Err(Error::Config(format!(
                "grid must be at least 64x64 points, got {}x{}",
                self.nx, self.nz
            )));
        }
        if self.pml_thickness < 8 || 4 * self.pml_thickness >= self.nx.min(self.nz) {
            return Err(Error::Config(format!(
                "pml_thickness {} must be >= 8 and < min(nx, nz)/4",
                self.pml_thickness
            )));
        }
        crate::solver::stencil_coefficients(self.fd_order)?;
        let courant = c_max * self.dt / self.dx;
        let limit = self.stability_limit().min(0.5);
        if courant > limit * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "CFL violated: c_max*dt/dx = {courant:.4} exceeds {limit:.4} (c_max = {c_max} m/s)"
            )));
        }
        Ok(())
    }
}

/// Linear array on the top face of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub n_elements: usize,
    /// Element center spacing, meters.
    pub pitch: f64,
    pub element_width_points: usize,
    pub kerf_points: usize,
    /// Hz.
    pub center_frequency: f64,
    /// Lateral position of the first element's center, meters.
    pub first_element_x: f64,
}

impl Probe {
    /// Array of `n_elements` centered on `grid`, element pitch `(width + kerf) * dx`.
    pub fn centered(
        grid: &SimGrid,
        n_elements: usize,
        element_width_points: usize,
        kerf_points: usize,
        center_frequency: f64,
    ) -> Self {
        let stride = element_width_points + kerf_points;
        let span = n_elements * stride - kerf_points;
        let start = grid.nx.saturating_sub(span) / 2;
        Self {
            n_elements,
            pitch: stride as f64 * grid.dx,
            element_width_points,
            kerf_points,
            center_frequency,
            first_element_x: (start as f64 + (element_width_points as f64 - 1.0) / 2.0) * grid.dx,
        }
    }

    /// 64 elements of 4 points with a 1-point kerf at 5 MHz.
    pub fn desk(grid: &SimGrid) -> Self {
        Self::centered(grid, 64, 4, 1, 5e6)
    }

    /// 128 elements of 4 points with a 4-point kerf at 5 MHz.
    pub fn full_scale(grid: &SimGrid) -> Self {
        Self::centered(grid, 128, 4, 4, 5e6)
    }

    fn stride_points(&self) -> usize {
        self.element_width_points + self.kerf_points
    }

    /// First grid column of element 0.
    fn first_column(&self, grid: &SimGrid) -> isize {
        (self.first_element_x / grid.dx - (self.element_width_points as f64 - 1.0) / 2.0).round()
            as isize
    }

    /// Grid columns covered by element `k`.
    pub fn element_columns(&self, k: usize, grid: &SimGrid) -> std::ops::Range<usize> {
        let start = (self.first_column(grid) + (k * self.stride_points()) as isize).max(0) as usize;
        start..start + self.element_width_points
    }

    /// Lateral center of element `k`, meters.
    pub fn element_x(&self, k: usize) -> f64 {
        self.first_element_x + k as f64 * self.pitch
    }

    pub fn validate(&self, grid: &SimGrid) -> Result<()> {
        if self.n_elements == 0 || self.element_width_points == 0 {
            return Err(Error::Config("probe needs at least one element of nonzero width".into()));
        }
        if !(self.center_frequency > 0.0) {
            return Err(Error::Config("probe center_frequency must be positive".into()));
        }
        let stride = self.stride_points() as f64 * grid.dx;
        if ((self.pitch - stride) / stride).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "probe pitch {} m disagrees with (width + kerf) * dx = {} m",
                self.pitch, stride
            )));
        }
        if (self.n_elements * self.stride_points()) as f64 * grid.dx > grid.width() * (1.0 + 1e-12) {
            return Err(Error::Config("probe is wider than the domain".into()));
        }
        if grid.dt > 1.0 / (8.0 * self.center_frequency) {
            return Err(Error::Config(format!(
                "time step {} s too coarse for {} Hz (needs dt <= 1/(8 f))",
                grid.dt, self.center_frequency
            )));
        }
        let first = self.first_column(grid);
        let last = self.element_columns(self.n_elements - 1, grid).end;
        if first < 0 || last > grid.nx {
            return Err(Error::Config("probe elements fall outside the grid".into()));
        }
        if grid.probe_row() >= grid.nz {
            return Err(Error::Config("probe row outside the grid".into()));
        }
        Ok(())
    }
}

/// Isotropic linear-elastic constants of a tissue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElasticModel {
    pub bulk_modulus: f64,
    pub shear_modulus: f64,
    pub density: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub lame_lambda: f64,
    pub lame_mu: f64,
}

impl ElasticModel {
    /// Derives the remaining constants from bulk modulus, shear modulus and density.
    pub fn from_bulk_shear(bulk_modulus: f64, shear_modulus: f64, density: f64) -> Result<Self> {
        if !(bulk_modulus > 0.0) {
            return Err(Error::Domain(format!("bulk modulus must be positive, got {bulk_modulus}")));
        }
        if !(density > 0.0) {
            return Err(Error::Domain(format!("density must be positive, got {density}")));
        }
        if !(shear_modulus >= 0.0) {
            return Err(Error::Domain(format!("shear modulus must be >= 0, got {shear_modulus}")));
        }
        let k = bulk_modulus;
        let g = shear_modulus;
        Ok(Self {
            bulk_modulus: k,
            shear_modulus: g,
            density,
            youngs_modulus: 9.0 * k * g / (3.0 * k + g),
            poisson_ratio: (3.0 * k - 2.0 * g) / (2.0 * (3.0 * k + g)),
            lame_lambda: k - 2.0 / 3.0 * g,
            lame_mu: g,
        })
    }
}

/// Pressure-wave speed `sqrt((K + 4G/3) / rho)`.
pub fn longitudinal_speed(model: &ElasticModel) -> Result<f64> {
    if !(model.density > 0.0) || !(model.bulk_modulus > 0.0) {
        return Err(Error::Domain("longitudinal speed needs K > 0 and rho > 0".into()));
    }
    if model.shear_modulus < 0.0 {
        return Err(Error::Domain("negative shear modulus".into()));
    }
    Ok(((model.bulk_modulus + 4.0 / 3.0 * model.shear_modulus) / model.density).sqrt())
}

/// Shear-wave speed `sqrt(G / rho)`.
pub fn shear_speed(model: &ElasticModel) -> Result<f64> {
    if !(model.density > 0.0) {
        return Err(Error::Domain("shear speed needs rho > 0".into()));
    }
    if model.shear_modulus < 0.0 {
        return Err(Error::Domain("negative shear modulus".into()));
    }
    Ok((model.shear_modulus / model.density).sqrt())
}

/// Heterogeneous acoustic medium sampled on a [`SimGrid`], row-major `nz x nx`.
#[derive(Debug, Clone, PartialEq)]
pub struct MediumMap {
    pub grid: SimGrid,
    /// m/s
    pub speed: Vec<f64>,
    /// kg/m^3
    pub density: Vec<f64>,
    /// dB/cm, frequency independent.
    pub attenuation_db_per_cm: f64,
}

impl MediumMap {
    pub fn homogeneous(grid: SimGrid, speed: f64, density: f64, attenuation_db_per_cm: f64) -> Self {
        let n = grid.cells();
        Self {
            grid,
            speed: vec![speed; n],
            density: vec![density; n],
            attenuation_db_per_cm,
        }
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.grid.nx + col
    }

    pub fn max_speed(&self) -> f64 {
        self.speed.iter().copied().fold(f64::MIN, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.grid.cells();
        if self.speed.len() != n || self.density.len() != n {
            return Err(Error::Schema(format!(
                "medium fields must have {} samples (got speed {}, density {})",
                n,
                self.speed.len(),
                self.density.len()
            )));
        }
        if let Some(c) = self
            .speed
            .iter()
            .find(|c| !(SPEED_BOUNDS.0..=SPEED_BOUNDS.1).contains(*c))
        {
            return Err(Error::Domain(format!("sound speed {c} m/s outside {SPEED_BOUNDS:?}")));
        }
        if let Some(r) = self.density.iter().find(|r| !(**r > 0.0) || !r.is_finite()) {
            return Err(Error::Domain(format!("density {r} must be positive")));
        }
        if !(self.attenuation_db_per_cm >= 0.0) {
            return Err(Error::Domain("attenuation must be >= 0".into()));
        }
        Ok(())
    }
}

/// Parameters of the random ellipse-and-speckle phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub n_ellipses_min: usize,
    pub n_ellipses_max: usize,
    /// m/s
    pub speed_min: f64,
    /// m/s
    pub speed_max: f64,
    /// kg/m^3
    pub background_density: f64,
    /// Fractional density perturbation range of a speckle reflector.
    pub speckle_amplitude_min: f64,
    pub speckle_amplitude_max: f64,
    /// Mean reflector count per wavelength squared.
    pub speckle_density_per_lambda2: f64,
    /// meters
    pub wavelength: f64,
    /// dB/cm
    pub attenuation_db_per_cm: f64,
    pub rng_seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            n_ellipses_min: 1,
            n_ellipses_max: 5,
            speed_min: 1300.0,
            speed_max: 1800.0,
            background_density: 900.0,
            speckle_amplitude_min: -0.03,
            speckle_amplitude_max: 0.06,
            speckle_density_per_lambda2: 2.0,
            wavelength: C_REF / 5e6,
            attenuation_db_per_cm: 2.5,
            rng_seed: 0,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ellipses_min < 1 || self.n_ellipses_min > self.n_ellipses_max {
            return Err(Error::Config("need 1 <= n_ellipses_min <= n_ellipses_max".into()));
        }
        if !(self.speed_min <= self.speed_max
            && self.speed_min >= SPEED_BOUNDS.0
            && self.speed_max <= SPEED_BOUNDS.1)
        {
            return Err(Error::Config(format!(
                "speed range [{}, {}] must be ordered and inside {SPEED_BOUNDS:?}",
                self.speed_min, self.speed_max
            )));
        }
        if !(self.background_density > 0.0) {
            return Err(Error::Config("background_density must be positive".into()));
        }
        if self.speckle_amplitude_min > self.speckle_amplitude_max || self.speckle_amplitude_min <= -1.0 {
            return Err(Error::Config("speckle amplitude range must be ordered and > -1".into()));
        }
        if !(self.speckle_density_per_lambda2 >= 0.0) || !(self.wavelength > 0.0) {
            return Err(Error::Config("speckle density must be >= 0 and wavelength > 0".into()));
        }
        if !(self.attenuation_db_per_cm >= 0.0) {
            return Err(Error::Config("attenuation must be >= 0".into()));
        }
        Ok(())
    }
}

/// One inclusion drawn by [`generate_phantom_with_layout`]. Lengths in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub center_x: f64,
    pub center_z: f64,
    pub semi_axis_a: f64,
    pub semi_axis_b: f64,
    /// radians, rotation of the `a` axis from the lateral direction.
    pub rotation: f64,
    pub speed: f64,
}

impl Ellipse {
    /// `(u/a)^2 + (v/b)^2 <= 1` in the rotated frame.
    pub fn contains(&self, x: f64, z: f64) -> bool {
        let (s, c) = self.rotation.sin_cos();
        let dx = x - self.center_x;
        let dz = z - self.center_z;
        let u = dx * c + dz * s;
        let v = -dx * s + dz * c;
        (u / self.semi_axis_a).powi(2) + (v / self.semi_axis_b).powi(2) <= 1.0
    }
}

pub fn generate_phantom(config: &PhantomConfig, grid: &SimGrid) -> Result<MediumMap> {
    generate_phantom_with_layout(config, grid).map(|(m, _)| m)
}

/// Draws a phantom and also returns its ellipses, in drawing order.
///
/// Draw order from `PortableRng::new(config.rng_seed)`: background speed,
/// ellipse count, then per ellipse (center x, center z, a, b, rotation, speed),
/// then one hit test per cell in row-major order followed, on a hit, by the
/// perturbation amplitude.
pub fn generate_phantom_with_layout(
    config: &PhantomConfig,
    grid: &SimGrid,
) -> Result<(MediumMap, Vec<Ellipse>)> {
    config.validate()?;
    let mut rng = PortableRng::new(config.rng_seed);
    let (nx, nz, dx) = (grid.nx, grid.nz, grid.dx);
    let domain = nx.min(nz) as f64 * dx;
    let axis_lo = 2.0 * config.wavelength;
    let axis_hi = domain / 3.0;
    if axis_lo > axis_hi {
        return Err(Error::Config(format!(
            "domain {domain} m too small for ellipses of at least 2 wavelengths"
        )));
    }

    let background = rng.uniform_range(config.speed_min, config.speed_max);
    let count = rng.int_inclusive(config.n_ellipses_min as u64, config.n_ellipses_max as u64);
    let ellipses: Vec<Ellipse> = (0..count)
        .map(|_| Ellipse {
            center_x: rng.uniform_range(0.0, grid.width()),
            center_z: rng.uniform_range(0.0, grid.depth()),
            semi_axis_a: rng.uniform_range(axis_lo, axis_hi),
            semi_axis_b: rng.uniform_range(axis_lo, axis_hi),
            rotation: rng.uniform_range(0.0, std::f64::consts::PI),
            speed: rng.uniform_range(config.speed_min, config.speed_max),
        })
        .collect();

    let mut speed = vec![background; grid.cells()];
    for row in 0..nz {
        let z = row as f64 * dx;
        for col in 0..nx {
            let x = col as f64 * dx;
            // later ellipses overwrite earlier ones
            if let Some(e) = ellipses.iter().rev().find(|e| e.contains(x, z)) {
                speed[row * nx + col] = e.speed;
            }
        }
    }

    let hit_probability =
        (config.speckle_density_per_lambda2 * (dx / config.wavelength).powi(2)).min(1.0);
    let mut density = vec![config.background_density; grid.cells()];
    for rho in density.iter_mut() {
        if rng.uniform() < hit_probability {
            let a = rng.uniform_range(config.speckle_amplitude_min, config.speckle_amplitude_max);
            *rho *= 1.0 + a;
        }
    }

    let medium = MediumMap {
        grid: grid.clone(),
        speed,
        density,
        attenuation_db_per_cm: config.attenuation_db_per_cm,
    };
    Ok((medium, ellipses))
}

/// Sound-speed image, row-major `height x width`, m/s (or network units).
#[derive(Debug, Clone, PartialEq)]
pub struct SpeedMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl SpeedMap {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Schema(format!(
                "speed map {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }
}

/// Area of the medium the network is trained to recover.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryRegion {
    /// Left edge, meters.
    pub x0: f64,
    /// Top edge, meters.
    pub z0: f64,
    pub width: f64,
    pub depth: f64,
    pub out_h: usize,
    pub out_w: usize,
}

impl RecoveryRegion {
    /// Laterally centered region starting one row below the probe, aligned to the grid.
    pub fn centered(grid: &SimGrid, width_points: usize, depth_points: usize, out_h: usize, out_w: usize) -> Self {
        let left = (grid.nx - width_points) / 2;
        let top = grid.probe_row() + 1;
        Self {
            x0: left as f64 * grid.dx,
            z0: top as f64 * grid.dx,
            width: width_points as f64 * grid.dx,
            depth: depth_points as f64 * grid.dx,
            out_h,
            out_w,
        }
    }

    /// 160 x 320 points (1.17 cm wide, 2.34 cm deep) recovered as a 64 x 32 map.
    pub fn desk(grid: &SimGrid) -> Self {
        Self::centered(grid, 160, 320, 64, 32)
    }

    /// Central 1.875 cm x 3.75 cm section.
    pub fn full_scale(grid: &SimGrid) -> Self {
        let w = (1.875e-2 / grid.dx).round() as usize;
        let d = (3.75e-2 / grid.dx).round() as usize;
        Self::centered(grid, w, d, 256, 128)
    }

    /// Checks that the region lies inside the grid and outside the absorbing layer.
    pub fn validate(&self, grid: &SimGrid) -> Result<()> {
        if self.out_h == 0 || self.out_w == 0 || !(self.width > 0.0) || !(self.depth > 0.0) {
            return Err(Error::Config("recovery region needs positive size".into()));
        }
        let lo = grid.pml_thickness as f64 * grid.dx;
        let hi_x = (grid.nx - grid.pml_thickness) as f64 * grid.dx;
        let hi_z = (grid.nz - grid.pml_thickness) as f64 * grid.dx;
        let eps = 1e-9 * grid.dx;
        if self.x0 < lo - eps || self.z0 < lo - eps || self.x0 + self.width > hi_x + eps || self.z0 + self.depth > hi_z + eps {
            return Err(Error::Bounds("recovery region overlaps the absorbing layer".into()));
        }
        Ok(())
    }
}

/// Crops the speed field to `region` and area-averages it onto `out_h x out_w` pixels.
///
/// Grid node `(row, col)` stands for the cell `[col*dx, (col+1)*dx) x [row*dx, (row+1)*dx)`.
pub fn extract_label(medium: &MediumMap, region: &RecoveryRegion) -> Result<SpeedMap> {
    let grid = &medium.grid;
    let eps = 1e-9 * grid.dx;
    if region.x0 < -eps
        || region.z0 < -eps
        || region.x0 + region.width > grid.width() + eps
        || region.z0 + region.depth > grid.depth() + eps
    {
        return Err(Error::Bounds(format!(
            "region [{}, {}] + [{}, {}] m outside the {} x {} m grid",
            region.x0,
            region.z0,
            region.width,
            region.depth,
            grid.width(),
            grid.depth()
        )));
    }
    if region.out_h == 0 || region.out_w == 0 {
        return Err(Error::Bounds("label dimensions must be nonzero".into()));
    }
    // Overlap weights per axis in units of cells.
    let rows = overlap_weights(region.z0 / grid.dx, region.depth / grid.dx, region.out_h, grid.nz);
    let cols = overlap_weights(region.x0 / grid.dx, region.width / grid.dx, region.out_w, grid.nx);

    let mut data = Vec::with_capacity(region.out_h * region.out_w);
    for row_w in &rows {
        for col_w in &cols {
            let mut acc = 0.0;
            let mut area = 0.0;
            for &(r, wr) in row_w {
                let base = r * grid.nx;
                for &(c, wc) in col_w {
                    acc += wr * wc * medium.speed[base + c];
                    area += wr * wc;
                }
            }
            data.push((acc / area) as f32);
        }
    }
    SpeedMap::new(region.out_h, region.out_w, data)
}

/// For each of `n` output bins spanning `[start, start + len)` (cell units),
/// the overlapping cells and their overlap lengths.
fn overlap_weights(start: f64, len: f64, n: usize, limit: usize) -> Vec<Vec<(usize, f64)>> {
    let step = len / n as f64;
    (0..n)
        .map(|k| {
            let lo = start + k as f64 * step;
            let hi = lo + step;
            let first = lo.floor().max(0.0) as usize;
            let last = (hi.ceil() as usize).min(limit);
            (first..last)
                .filter_map(|cell| {
                    let w = (hi.min(cell as f64 + 1.0) - lo.max(cell as f64)).max(0.0);
                    (w > 1e-12).then_some((cell, w))
                })
                .collect()
        })
        .collect()
}
