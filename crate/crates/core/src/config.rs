//! TOML run configuration. Every section and key is optional; missing values take
//! the desk-scale defaults.
//!
//! ```toml
//! [grid]
//! nx = 384
//! nz = 384
//! dx = 7.3e-5
//! cfl = 0.2
//! c_max = 1800.0
//! duration = 40e-6
//! pml_thickness = 20
//! fd_order = 8
//!
//! [probe]
//! n_elements = 64
//! element_width_points = 4
//! kerf_points = 1
//! center_frequency = 5e6
//!
//! [region]
//! width_points = 160
//! depth_points = 320
//! out_h = 64
//! out_w = 32
//!
//! [dataset]
//! base_seed = 1
//! n_train = 200
//! n_test = 40
//! test_id_offset = 1000000
//! ```
//!
//! `[phantom]`, `[transmit]`, `[preprocess]`, `[train]` and `[network]` take the
//! field names of the corresponding structs.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataio::DatasetMeta;
use crate::error::{Error, Result};
use crate::medium::{PhantomConfig, Probe, RecoveryRegion, SimGrid, DEFAULT_CFL, DEFAULT_C_MAX};
use crate::pipeline::dataset_meta;
use crate::preprocess::PreprocConfig;
use crate::solver::TransmitConfig;
use crate::train::{NetworkSettings, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSettings {
    pub nx: usize,
    pub nz: usize,
    pub dx: f64,
    pub cfl: f64,
    pub c_max: f64,
    pub duration: f64,
    pub pml_thickness: usize,
    pub fd_order: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            nx: 384,
            nz: 384,
            dx: 7.3e-5,
            cfl: DEFAULT_CFL,
            c_max: DEFAULT_C_MAX,
            duration: 40e-6,
            pml_thickness: 20,
            fd_order: 8,
        }
    }
}

impl GridSettings {
    pub fn build(&self) -> Result<SimGrid> {
        if !(self.cfl > 0.0 && self.c_max > 0.0 && self.duration > 0.0 && self.dx > 0.0) {
            return Err(Error::Config("grid dx, cfl, c_max and duration must be positive".into()));
        }
        let mut g = SimGrid::from_cfl(self.nx, self.nz, self.dx, self.cfl, self.c_max, self.duration, self.pml_thickness);
        g.fd_order = self.fd_order;
        g.validate(self.c_max)?;
        Ok(g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSettings {
    pub n_elements: usize,
    pub element_width_points: usize,
    pub kerf_points: usize,
    pub center_frequency: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self {
            n_elements: 64,
            element_width_points: 4,
            kerf_points: 1,
            center_frequency: 5e6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegionSettings {
    pub width_points: usize,
    pub depth_points: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl Default for RegionSettings {
    fn default() -> Self {
        Self {
            width_points: 160,
            depth_points: 320,
            out_h: 64,
            out_w: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub base_seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    /// First sample id of the test split; train ids start at 0.
    pub test_id_offset: u64,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            base_seed: 1,
            n_train: 200,
            n_test: 40,
            test_id_offset: 1_000_000,
        }
    }
}

impl DatasetSettings {
    pub fn train_ids(&self) -> Vec<u64> {
        (0..self.n_train as u64).collect()
    }

    pub fn test_ids(&self) -> Vec<u64> {
        (0..self.n_test as u64).map(|i| self.test_id_offset + i).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if (self.n_train as u64) > self.test_id_offset {
            return Err(Error::Config(format!(
                "{} train samples would overlap test ids starting at {}",
                self.n_train, self.test_id_offset
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridSettings,
    pub probe: ProbeSettings,
    pub phantom: PhantomConfig,
    pub transmit: TransmitConfig,
    pub region: RegionSettings,
    pub preprocess: PreprocConfig,
    pub train: TrainConfig,
    pub network: NetworkSettings,
    pub dataset: DatasetSettings,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> String {
        hex(&Sha256::digest(self.to_toml_string().as_bytes()))
    }

    /// Dataset metadata for the simulation sections of this config.
    pub fn dataset_meta(&self) -> Result<DatasetMeta> {
        let grid = self.grid.build()?;
        let p = &self.probe;
        let probe = Probe::centered(&grid, p.n_elements, p.element_width_points, p.kerf_points, p.center_frequency);
        let r = &self.region;
        if r.width_points > grid.nx {
            return Err(Error::Config("region is wider than the grid".into()));
        }
        let region = RecoveryRegion::centered(&grid, r.width_points, r.depth_points, r.out_h, r.out_w);
        self.dataset.validate()?;
        dataset_meta(grid, probe, self.phantom.clone(), self.transmit.clone(), region, self.dataset.base_seed)
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
