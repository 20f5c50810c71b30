//! Proportional pressure control and the emulated embedded device that runs
//! it.
//!
//! An [`EmulatedDevice`] owns four chambers, each with its own plant model,
//! and closes a proportional loop on every chamber at the control rate. It
//! takes commands and reports pressures as protocol words, so it can sit on a
//! simulated bus, or be driven directly for bench-style experiments.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::bus_sim::{BusDevice, BusError, BusTimingConfig, PressureMaster};
use crate::dynamics::{
    abs_pa_to_gauge_kpa, gauge_kpa_to_abs_pa, step_pressure, DynamicsError, Excitation,
    JointState, ModelParams, NonlinearParams, PressureModel, ATMOSPHERIC_PA, CHAMBERS,
};
use crate::sysid::Dataset;
use crate::wire_protocol::{
    pressure_to_word, word_to_pressure, DataWord, DeviceAddress, FULL_SCALE_KPA, PAYLOAD_WORDS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("device {address}: {source}")]
    Plant {
        address: DeviceAddress,
        #[source]
        source: DynamicsError,
    },
    #[error(transparent)]
    Bus(#[from] BusError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Proportional gain, V/Pa.
    pub k_p: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Hz.
    pub control_rate: f64,
    /// Valve command at zero error: the valve's closed (centered) position.
    pub u_offset: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            k_p: 2e-4,
            u_min: 0.0,
            u_max: 12.0,
            control_rate: 100.0,
            u_offset: NonlinearParams::default().valve.center_volts(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.u_min < self.u_max && self.k_p > 0.0 && self.control_rate > 0.0)
            || !self.u_offset.is_finite()
        {
            return Err(ControllerError::InvalidParameter(format!(
                "controller needs u_min < u_max, k_p > 0, control_rate > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.control_rate
    }
}

/// `u = clamp(u_offset + k_p (p_des - p), u_min, u_max)`.
#[inline]
pub fn control_law(p_des: f64, p: f64, config: &ControllerConfig) -> f64 {
    (config.u_offset + config.k_p * (p_des - p)).clamp(config.u_min, config.u_max)
}

/// Prescribed joint motion; the joint itself is not simulated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JointMotion {
    Frozen {
        q_rad: [f64; 2],
    },
    Sinusoid {
        amplitude_rad: [f64; 2],
        frequency_hz: [f64; 2],
        phase_rad: [f64; 2],
    },
    SmoothStep {
        from_rad: [f64; 2],
        to_rad: [f64; 2],
        start_s: f64,
        duration_s: f64,
    },
}

impl Default for JointMotion {
    fn default() -> Self {
        JointMotion::Frozen { q_rad: [0.0; 2] }
    }
}

impl JointMotion {
    pub fn state(&self, t: f64) -> JointState {
        match *self {
            JointMotion::Frozen { q_rad } => JointState::at_rest(q_rad),
            JointMotion::Sinusoid {
                amplitude_rad: a,
                frequency_hz: f,
                phase_rad: ph,
            } => {
                let w = f.map(|f| 2.0 * std::f64::consts::PI * f);
                JointState {
                    q: [a[0] * (w[0] * t + ph[0]).sin(), a[1] * (w[1] * t + ph[1]).sin()],
                    q_dot: [a[0] * w[0] * (w[0] * t + ph[0]).cos(), a[1] * w[1] * (w[1] * t + ph[1]).cos()],
                }
            }
            JointMotion::SmoothStep {
                from_rad,
                to_rad,
                start_s,
                duration_s,
            } => {
                let s = if duration_s > 0.0 {
                    ((t - start_s) / duration_s).clamp(0.0, 1.0)
                } else if t >= start_s {
                    1.0
                } else {
                    0.0
                };
                let shape = s * s * (3.0 - 2.0 * s);
                let rate = if duration_s > 0.0 { 6.0 * s * (1.0 - s) / duration_s } else { 0.0 };
                let mut state = JointState::default();
                for i in 0..2 {
                    let d = to_rad[i] - from_rad[i];
                    state.q[i] = from_rad[i] + d * shape;
                    state.q_dot[i] = d * rate;
                }
                state
            }
        }
    }
}

/// Everything needed to build one emulated device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceConfig {
    /// Plant model of each chamber.
    pub plants: [ModelParams; CHAMBERS],
    pub controller: ControllerConfig,
    /// Standard deviation of the pressure sensor noise seen by the loop, Pa.
    pub sensor_noise_pa: f64,
    pub joint: JointMotion,
    pub seed: u64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self::uniform(ModelParams::Nonlinear(NonlinearParams::default()))
    }
}

impl DeviceConfig {
    /// Same plant in all four chambers, default controller, no noise.
    pub fn uniform(plant: ModelParams) -> Self {
        Self {
            plants: [plant; CHAMBERS],
            controller: ControllerConfig::default(),
            sensor_noise_pa: 0.0,
            joint: JointMotion::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        self.controller.validate()?;
        if !(self.sensor_noise_pa >= 0.0 && self.sensor_noise_pa.is_finite()) {
            return Err(ControllerError::InvalidParameter(format!(
                "sensor noise must be >= 0, got {}",
                self.sensor_noise_pa
            )));
        }
        for plant in &self.plants {
            let r = match plant {
                ModelParams::Linear(p) => p.validate(),
                ModelParams::Nonlinear(p) => p.validate(),
                ModelParams::Parametric(p) => p.geometry.validate(),
            };
            r.map_err(|e| ControllerError::InvalidParameter(e.to_string()))?;
        }
        Ok(())
    }
}

/// A device with four closed-loop chambers.
pub struct EmulatedDevice {
    address: DeviceAddress,
    config: DeviceConfig,
    /// True chamber pressures, absolute Pa.
    p: [f64; CHAMBERS],
    /// Targets, absolute Pa.
    p_des: [f64; CHAMBERS],
    /// Pressures measured at the latest tick.
    measured: [f64; CHAMBERS],
    t: f64,
    ticks: u64,
    /// Bus time received through `advance`.
    elapsed: f64,
    noise: Option<Normal<f64>>,
    rng: ChaCha8Rng,
    recording: Option<Recording>,
    error: Option<ControllerError>,
}

/// What a device logged while recording.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Recording {
    /// One row per control tick; `p` holds the measured pressures.
    pub data: Dataset,
    /// Noise-free chamber pressures at the same ticks.
    pub p_true: Vec<[f64; CHAMBERS]>,
}

impl EmulatedDevice {
    /// A device at rest with all chambers vented to atmosphere.
    pub fn new(address: DeviceAddress, config: DeviceConfig) -> Result<Self, ControllerError> {
        config.validate()?;
        let noise = (config.sensor_noise_pa > 0.0)
            .then(|| Normal::new(0.0, config.sensor_noise_pa).expect("validated sigma"));
        Ok(Self {
            address,
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            p: [ATMOSPHERIC_PA; CHAMBERS],
            p_des: [ATMOSPHERIC_PA; CHAMBERS],
            measured: [ATMOSPHERIC_PA; CHAMBERS],
            t: 0.0,
            ticks: 0,
            elapsed: 0.0,
            noise,
            recording: None,
            error: None,
        })
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// True chamber pressures, absolute Pa.
    pub fn pressures(&self) -> [f64; CHAMBERS] {
        self.p
    }

    pub fn set_pressures(&mut self, p: [f64; CHAMBERS]) {
        self.p = p;
        self.measured = p;
    }

    pub fn targets(&self) -> [f64; CHAMBERS] {
        self.p_des
    }

    /// Set targets (absolute Pa) directly, without going through the bus.
    pub fn set_targets(&mut self, p_des: [f64; CHAMBERS]) {
        self.p_des = p_des;
    }

    pub fn start_recording(&mut self) {
        self.recording = Some(Recording {
            data: Dataset::with_capacity(0, self.config.controller.control_rate),
            p_true: Vec::new(),
        });
    }

    pub fn take_recording(&mut self) -> Recording {
        self.recording.take().unwrap_or_default()
    }

    /// First plant failure seen while being advanced by the bus.
    pub fn take_error(&mut self) -> Option<ControllerError> {
        self.error.take()
    }

    /// One control period: measure, compute valve commands, integrate.
    pub fn tick(&mut self) -> Result<(), ControllerError> {
        let ctl = self.config.controller;
        let dt = ctl.dt();
        let j0 = self.config.joint.state(self.t);
        let j1 = self.config.joint.state(self.t + dt);

        let mut measured = self.p;
        if let Some(noise) = &self.noise {
            for m in &mut measured {
                *m += noise.sample(&mut self.rng);
            }
        }

        let mut u = [0.0; CHAMBERS];
        let mut next = self.p;
        for c in 0..CHAMBERS {
            u[c] = control_law(self.p_des[c], measured[c], &ctl);
            let start = Excitation {
                p_cmd_pa: self.p_des[c],
                u_volts: u[c],
                joint: j0,
            };
            let end = Excitation { joint: j1, ..start };
            let plant = &self.config.plants[c];
            let fail = |pressure: f64| ControllerError::Plant {
                address: self.address,
                source: DynamicsError::Divergence {
                    step: self.ticks as usize,
                    pressure,
                },
            };
            next[c] = step_pressure(plant, c, self.p[c], &start, &end, dt).map_err(|e| match e {
                DynamicsError::Orientation { .. } => fail(self.p[c]),
                source => ControllerError::Plant {
                    address: self.address,
                    source,
                },
            })?;
            if !next[c].is_finite() || next[c].abs() > plant.divergence_limit() {
                return Err(fail(next[c]));
            }
        }

        if let Some(rec) = &mut self.recording {
            rec.data.push(self.t, self.p_des, measured, u, j0);
            rec.p_true.push(self.p);
        }
        self.measured = measured;
        self.p = next;
        self.ticks += 1;
        self.t = self.ticks as f64 * dt;
        Ok(())
    }

    pub fn run_ticks(&mut self, n: usize) -> Result<(), ControllerError> {
        for _ in 0..n {
            self.tick()?;
        }
        Ok(())
    }
}

impl BusDevice for EmulatedDevice {
    fn address(&self) -> DeviceAddress {
        self.address
    }

    fn receive_commands(&mut self, commands: [DataWord; PAYLOAD_WORDS]) {
        self.p_des = commands.map(|w| gauge_kpa_to_abs_pa(word_to_pressure(w)));
    }

    fn measurements(&self) -> [DataWord; PAYLOAD_WORDS] {
        self.measured.map(|p| pressure_to_word(abs_pa_to_gauge_kpa(p)))
    }

    /// Run every control tick that falls due in the next `dt` seconds.
    fn advance(&mut self, dt: f64) {
        self.elapsed += dt;
        let due = (self.elapsed * self.config.controller.control_rate + 1e-9).floor() as u64;
        while self.error.is_none() && self.ticks < due {
            if let Err(e) = self.tick() {
                self.error = Some(e);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Experiments

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    /// 10 % to 90 % of the step; `None` if never reached.
    pub rise_time_s: Option<f64>,
    /// Peak excursion past the command, percent of the step size.
    pub overshoot_pct: f64,
    /// Time after which the pressure stays within 5 % of the step size of
    /// the command; `None` if it does not settle.
    pub settling_time_s: Option<f64>,
    /// Mean error over the last tenth of the run, Pa.
    pub steady_state_error_pa: f64,
}

impl StepMetrics {
    pub fn settled(&self) -> bool {
        self.settling_time_s.is_some()
    }
}

/// Step metrics of one trajectory sampled every `dt`.
pub fn step_metrics(p: &[f64], p0: f64, p_cmd: f64, dt: f64) -> StepMetrics {
    let step = p_cmd - p0;
    let n = p.len();
    if n == 0 {
        return StepMetrics {
            rise_time_s: None,
            overshoot_pct: 0.0,
            settling_time_s: None,
            steady_state_error_pa: 0.0,
        };
    }
    let tail = &p[n - (n / 10).max(1)..];
    let steady_state_error_pa = tail.iter().map(|x| x - p_cmd).sum::<f64>() / tail.len() as f64;
    let band = 0.05 * step.abs();
    let settling_time_s = match p.iter().rposition(|x| (x - p_cmd).abs() > band) {
        None => Some(0.0),
        Some(k) if k + 1 < n => Some((k + 1) as f64 * dt),
        Some(_) => None,
    };
    if step == 0.0 {
        return StepMetrics {
            rise_time_s: Some(0.0),
            overshoot_pct: 0.0,
            settling_time_s,
            steady_state_error_pa,
        };
    }
    let progress = |x: f64| (x - p0) / step;
    let crossing = |level: f64| p.iter().position(|&x| progress(x) >= level);
    let rise_time_s = match (crossing(0.1), crossing(0.9)) {
        (Some(a), Some(b)) => Some((b - a) as f64 * dt),
        _ => None,
    };
    let peak = p.iter().map(|&x| progress(x)).fold(f64::NEG_INFINITY, f64::max);
    StepMetrics {
        rise_time_s,
        overshoot_pct: 100.0 * (peak - 1.0).max(0.0),
        settling_time_s,
        steady_state_error_pa,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResponse {
    pub recording: Recording,
    /// Computed on the noise-free pressures.
    pub metrics: [StepMetrics; CHAMBERS],
}

/// Hold every chamber at `p0`, command `p_cmd` (both absolute Pa) and run
/// for `duration` seconds.
pub fn step_response(
    device: &mut EmulatedDevice,
    p0: f64,
    p_cmd: f64,
    duration: f64,
) -> Result<StepResponse, ControllerError> {
    check_sensor_range(p0)?;
    check_sensor_range(p_cmd)?;
    let ctl = device.config.controller;
    let n = (duration * ctl.control_rate).round() as usize;
    device.set_pressures([p0; CHAMBERS]);
    device.set_targets([p_cmd; CHAMBERS]);
    device.start_recording();
    let run = device.run_ticks(n);
    let recording = device.take_recording();
    run?;
    let metrics = std::array::from_fn(|c| {
        let p: Vec<f64> = recording.p_true.iter().map(|row| row[c]).collect();
        step_metrics(&p, p0, p_cmd, ctl.dt())
    });
    Ok(StepResponse { recording, metrics })
}

fn check_sensor_range(p_abs: f64) -> Result<(), ControllerError> {
    let kpa = abs_pa_to_gauge_kpa(p_abs);
    if !(-1e-9..=FULL_SCALE_KPA + 1e-9).contains(&kpa) {
        return Err(ControllerError::InvalidParameter(format!(
            "pressure {kpa} kPa gauge is outside the sensor range 0..{FULL_SCALE_KPA}"
        )));
    }
    Ok(())
}

/// Mean and two-sided 95 % confidence band across trials.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrials {
    pub t: Vec<f64>,
    pub mean: Vec<[f64; CHAMBERS]>,
    pub lower: Vec<[f64; CHAMBERS]>,
    pub upper: Vec<[f64; CHAMBERS]>,
    pub metrics: Vec<[StepMetrics; CHAMBERS]>,
}

/// Run `trials` step responses, trial `i` seeded with `config.seed + i`, and
/// summarize the measured pressures.
pub fn step_trials(
    config: &DeviceConfig,
    p0: f64,
    p_cmd: f64,
    duration: f64,
    trials: usize,
) -> Result<StepTrials, ControllerError> {
    if trials == 0 {
        return Err(ControllerError::InvalidParameter("need at least one trial".into()));
    }
    let address = DeviceAddress::from_index(0).expect("index 0 is valid");
    let mut runs = Vec::with_capacity(trials);
    let mut metrics = Vec::with_capacity(trials);
    for i in 0..trials {
        let cfg = DeviceConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        let mut dev = EmulatedDevice::new(address, cfg)?;
        let r = step_response(&mut dev, p0, p_cmd, duration)?;
        metrics.push(r.metrics);
        runs.push(r.recording.data);
    }

    let n = runs[0].len();
    let half_width = if trials > 1 {
        let t = StudentsT::new(0.0, 1.0, (trials - 1) as f64).expect("dof >= 1");
        t.inverse_cdf(0.975) / (trials as f64).sqrt()
    } else {
        0.0
    };
    let mut out = StepTrials {
        t: runs[0].t.clone(),
        mean: vec![[0.0; CHAMBERS]; n],
        lower: vec![[0.0; CHAMBERS]; n],
        upper: vec![[0.0; CHAMBERS]; n],
        metrics,
    };
    let mut xs = vec![0.0; trials];
    for k in 0..n {
        for c in 0..CHAMBERS {
            for (x, run) in xs.iter_mut().zip(&runs) {
                *x = run.p[k][c];
            }
            let (m, s) = mean_std(&xs);
            out.mean[k][c] = m;
            out.lower[k][c] = m - half_width * s;
            out.upper[k][c] = m + half_width * s;
        }
    }
    Ok(out)
}

/// Sample mean and standard deviation; exactly `(x, 0)` when all samples
/// agree.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let s = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, s)
}

/// Pressure targets for four chambers, absolute Pa, one row per control
/// tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub p_des: Vec<[f64; CHAMBERS]>,
}

impl Reference {
    pub fn constant(p: [f64; CHAMBERS], n: usize) -> Self {
        Self { p_des: vec![p; n] }
    }

    /// `mean + amplitude sin(2 pi f t + phase_c)` per chamber.
    pub fn sinusoid(mean: f64, amplitude: f64, freq_hz: f64, phases: [f64; CHAMBERS], n: usize, rate: f64) -> Self {
        let w = 2.0 * std::f64::consts::PI * freq_hz;
        Self {
            p_des: (0..n)
                .map(|k| {
                    let t = k as f64 / rate;
                    phases.map(|ph| mean + amplitude * (w * t + ph).sin())
                })
                .collect(),
        }
    }

    /// Independent random levels per chamber, uniform in `[lo, hi]`, each
    /// held for a uniform `[hold_min, hold_max]` seconds and blended into
    /// the next with a smoothstep of length `transition`.
    #[allow(clippy::too_many_arguments)]
    pub fn random_steps(
        n: usize,
        rate: f64,
        lo: f64,
        hi: f64,
        hold_min: f64,
        hold_max: f64,
        transition: f64,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let level = Uniform::new_inclusive(lo, hi).expect("lo <= hi");
        let hold = Uniform::new_inclusive(hold_min, hold_max).expect("hold_min <= hold_max");
        let mut p_des = vec![[0.0; CHAMBERS]; n];
        for c in 0..CHAMBERS {
            let mut prev = level.sample(&mut rng);
            let mut next = level.sample(&mut rng);
            let mut switch_at = hold.sample(&mut rng);
            for (k, row) in p_des.iter_mut().enumerate() {
                let t = k as f64 / rate;
                while t >= switch_at + transition {
                    prev = next;
                    next = level.sample(&mut rng);
                    switch_at += transition + hold.sample(&mut rng);
                }
                let s = if t <= switch_at || transition <= 0.0 {
                    0.0
                } else {
                    ((t - switch_at) / transition).min(1.0)
                };
                row[c] = prev + (next - prev) * s * s * (3.0 - 2.0 * s);
            }
        }
        Self { p_des }
    }

    pub fn len(&self) -> usize {
        self.p_des.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_des.is_empty()
    }

    fn validate(&self) -> Result<(), ControllerError> {
        self.p_des.iter().flatten().try_for_each(|&p| check_sensor_range(p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingLog {
    pub recording: Recording,
    /// Integrated absolute tracking error per chamber (noise-free
    /// pressure), Pa s.
    pub iae: [f64; CHAMBERS],
}

impl TrackingLog {
    fn from_recording(recording: Recording) -> Self {
        let dt = recording.data.dt();
        let mut iae = [0.0; CHAMBERS];
        for (des, p) in recording.data.p_des.iter().zip(&recording.p_true) {
            for c in 0..CHAMBERS {
                iae[c] += (des[c] - p[c]).abs() * dt;
            }
        }
        Self { recording, iae }
    }

    /// Tracking error (target minus true pressure) per tick, Pa.
    pub fn errors(&self) -> Vec<[f64; CHAMBERS]> {
        self.recording
            .data
            .p_des
            .iter()
            .zip(&self.recording.p_true)
            .map(|(d, p)| std::array::from_fn(|c| d[c] - p[c]))
            .collect()
    }
}

/// Follow `reference` with targets set directly on the device.
pub fn track_trajectory(device: &mut EmulatedDevice, reference: &Reference) -> Result<TrackingLog, ControllerError> {
    reference.validate()?;
    device.start_recording();
    let mut run = Ok(());
    for row in &reference.p_des {
        device.set_targets(*row);
        run = device.tick();
        if run.is_err() {
            break;
        }
    }
    let recording = device.take_recording();
    run?;
    Ok(TrackingLog::from_recording(recording))
}

/// Follow one reference per device, delivering the targets over a simulated
/// bus: at every control tick the master sends each device its commands in
/// turn, and devices run their loops on the bus clock.
pub fn track_on_bus(
    devices: Vec<EmulatedDevice>,
    references: &[Reference],
    bus: BusTimingConfig,
) -> Result<Vec<TrackingLog>, ControllerError> {
    if devices.is_empty() || devices.len() != references.len() {
        return Err(ControllerError::InvalidParameter(format!(
            "{} devices but {} references",
            devices.len(),
            references.len()
        )));
    }
    let rate = devices[0].config.controller.control_rate;
    if devices.iter().any(|d| d.config.controller.control_rate != rate) {
        return Err(ControllerError::InvalidParameter("devices must share a control rate".into()));
    }
    let n = references[0].len();
    if references.iter().any(|r| r.len() != n) {
        return Err(ControllerError::InvalidParameter("references differ in length".into()));
    }
    for r in references {
        r.validate()?;
    }

    let mut master = PressureMaster::new(bus, devices)?;
    master.bus_mut().set_event_logging(false);
    for d in master.bus_mut().devices_mut() {
        d.start_recording();
    }
    let dt = 1.0 / rate;
    for k in 0..n {
        master.bus_mut().idle_until(k as f64 * dt);
        for (i, r) in references.iter().enumerate() {
            master.set_pressure_commands(i, r.p_des[k].map(abs_pa_to_gauge_kpa))?;
        }
        if let Some(e) = master.bus_mut().devices_mut().iter_mut().find_map(|d| d.take_error()) {
            return Err(e);
        }
    }
    master.bus_mut().idle_until(n as f64 * dt);

    let mut logs = Vec::with_capacity(references.len());
    for mut d in master.into_devices() {
        if let Some(e) = d.take_error() {
            return Err(e);
        }
        let mut rec = d.take_recording();
        rec.data = rec.data.slice(0..n.min(rec.data.len()));
        rec.p_true.truncate(n);
        logs.push(TrackingLog::from_recording(rec));
    }
    Ok(logs)
}
