//! Synthetic datasets: a closed-loop emulated device following random
//! pressure steps, optionally with measurement noise added afterwards.

use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use super::SysidError;
use crate::controller::{track_trajectory, DeviceConfig, EmulatedDevice, JointMotion, Reference};
use crate::dynamics::{gauge_kpa_to_abs_pa, ModelParams, NonlinearParams, CHAMBERS};
use crate::wire_protocol::DeviceAddress;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepReferenceConfig {
    pub lo_kpa: f64,
    pub hi_kpa: f64,
    pub hold_min_s: f64,
    pub hold_max_s: f64,
    pub transition_s: f64,
}

impl Default for StepReferenceConfig {
    fn default() -> Self {
        Self {
            lo_kpa: 50.0,
            hi_kpa: 300.0,
            hold_min_s: 0.5,
            hold_max_s: 2.5,
            transition_s: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub device: DeviceConfig,
    pub samples: usize,
    pub reference: StepReferenceConfig,
    /// Measurement noise as a fraction of each chamber's pressure standard
    /// deviation.
    pub measurement_noise_rel: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// 22,000 samples of a nonlinear four-chamber device whose chambers
    /// differ slightly, with the joint swaying slowly, 1 % noise.
    fn default() -> Self {
        let base = NonlinearParams::default();
        let plants: [ModelParams; CHAMBERS] = std::array::from_fn(|c| {
            let mut p = base;
            let f = c as f64;
            p.valve.l_in = 0.04 + 0.01 * f;
            p.valve.l_out = 0.06 - 0.005 * f;
            p.valve.b = 9.0 + 0.75 * f;
            p.valve.u_in_volts = 6.4 + 0.1 * f;
            p.valve.u_out_volts = 5.6 - 0.05 * f;
            p.w = 1.0;
            ModelParams::Nonlinear(p)
        });
        Self {
            device: DeviceConfig {
                plants,
                joint: JointMotion::Sinusoid {
                    amplitude_rad: [0.25, 0.2],
                    frequency_hz: [0.11, 0.07],
                    phase_rad: [0.0, 1.0],
                },
                ..DeviceConfig::default()
            },
            samples: 22_000,
            reference: StepReferenceConfig::default(),
            measurement_noise_rel: 0.01,
            seed: 1,
        }
    }
}

pub fn generate(config: &SyntheticConfig) -> Result<Dataset, SysidError> {
    let r = &config.reference;
    if !(r.lo_kpa <= r.hi_kpa && r.hold_min_s > 0.0 && r.hold_min_s <= r.hold_max_s && r.transition_s >= 0.0) {
        return Err(SysidError::InvalidParameter(format!("bad reference config {r:?}")));
    }
    if !(config.measurement_noise_rel >= 0.0) {
        return Err(SysidError::InvalidParameter("noise level must be >= 0".into()));
    }
    let rate = config.device.controller.control_rate;
    let reference = Reference::random_steps(
        config.samples,
        rate,
        gauge_kpa_to_abs_pa(r.lo_kpa),
        gauge_kpa_to_abs_pa(r.hi_kpa),
        r.hold_min_s,
        r.hold_max_s,
        r.transition_s,
        config.seed,
    );
    let address = DeviceAddress::from_index(0).expect("index 0 is valid");
    let mut device = EmulatedDevice::new(address, config.device.clone())?;
    if let Some(first) = reference.p_des.first() {
        device.set_pressures(*first);
    }
    let log = track_trajectory(&mut device, &reference)?;
    Ok(log
        .recording
        .data
        .with_measurement_noise(config.measurement_noise_rel, config.seed.wrapping_add(1)))
}
