//! The JSON run configuration. Every section is optional; missing fields
//! take their defaults, and the resolved document is echoed into the output
//! directory as `config.json`.

use std::f64::consts::PI;
use std::path::PathBuf;

use pneu_core::bus_sim::BusTimingConfig;
use pneu_core::controller::DeviceConfig;
use pneu_core::dynamics::ModelKind;
use pneu_core::sysid::{FitContext, FitOptions, StepReferenceConfig, SyntheticConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// When set, overrides the seed of every section below.
    pub seed: Option<u64>,
    pub bus: BusTimingConfig,
    pub device: DeviceConfig,
    pub bench: BenchConfig,
    pub step: StepConfig,
    pub track: TrackConfig,
    pub synthetic: SyntheticConfig,
    pub fit: FitConfig,
    pub compare: CompareConfig,
}

impl RunConfig {
    pub fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.bus.seed = seed;
            self.device.seed = seed;
            self.synthetic.seed = seed;
            self.synthetic.device.seed = seed;
            self.fit.options.seed = seed;
            self.compare.options.seed = seed;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Rows 1..=devices are measured.
    pub devices: usize,
    pub iterations: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { devices: 3, iterations: 2044 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepConfig {
    pub p0_kpa: f64,
    pub p_cmd_kpa: f64,
    pub duration_s: f64,
    pub trials: usize,
}

impl Default for StepConfig {
    fn default() -> Self {
        Self {
            p0_kpa: 50.0,
            p_cmd_kpa: 300.0,
            duration_s: 3.0,
            trials: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrackReference {
    Sinusoid {
        mean_kpa: f64,
        amplitude_kpa: f64,
        frequency_hz: f64,
        phases_rad: [f64; 4],
    },
    RandomSteps(StepReferenceConfig),
}

impl Default for TrackReference {
    fn default() -> Self {
        TrackReference::Sinusoid {
            mean_kpa: 175.0,
            amplitude_kpa: 100.0,
            frequency_hz: 0.2,
            phases_rad: [0.0, 0.5 * PI, PI, 1.5 * PI],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackConfig {
    pub devices: usize,
    pub duration_s: f64,
    /// Deliver targets over the simulated bus rather than directly.
    pub on_bus: bool,
    pub reference: TrackReference,
}

impl Default for TrackConfig {
    fn default() -> Self {
        Self {
            devices: 1,
            duration_s: 20.0,
            on_bus: true,
            reference: TrackReference::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Dataset CSV; generated from `synthetic` when absent.
    pub data: Option<PathBuf>,
    pub model: ModelKind,
    pub chambers: Vec<usize>,
    /// Fit on the first samples only; all of them when absent.
    pub train_samples: Option<usize>,
    pub options: FitOptions,
    pub context: FitContext,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            data: None,
            model: ModelKind::Nonlinear,
            chambers: vec![0, 1, 2, 3],
            train_samples: None,
            options: FitOptions::default(),
            context: FitContext::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Dataset CSV; generated from `synthetic` when absent.
    pub data: Option<PathBuf>,
    /// Samples in the training split; the rest validate.
    pub train_samples: usize,
    pub options: FitOptions,
    pub context: FitContext,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            data: None,
            train_samples: 20_000,
            options: FitOptions::default(),
            context: FitContext::default(),
        }
    }
}
