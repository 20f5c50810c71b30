use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use pneu_core::bus_sim::{
    calibrate_overheads, measure_loop_rate, predicted_period, BusError, LoopRateStats, OverheadCalibration,
    MEASURED_LOOP_RATES,
};
use pneu_core::controller::{
    step_trials, track_on_bus, track_trajectory, ControllerError, EmulatedDevice, Reference, StepMetrics,
};
use pneu_core::dynamics::{abs_pa_to_gauge_kpa, gauge_kpa_to_abs_pa, ModelKind, CHAMBERS};
use pneu_core::sysid::{compare_models, fit, generate, predict_open_loop, Dataset, FitResult, SysidError};
use pneu_core::wire_protocol::DeviceAddress;
use serde::Serialize;

use crate::config::{RunConfig, TrackReference};

/// Failure classes, one per nonzero exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<SysidError> for CliError {
    fn from(e: SysidError) -> Self {
        match e {
            SysidError::FitFailed { .. } | SysidError::Dynamics(_) => CliError::Numerical(e.to_string()),
            SysidError::Controller(c) => c.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<ControllerError> for CliError {
    fn from(e: ControllerError) -> Self {
        match e {
            ControllerError::InvalidParameter(_) => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<BusError> for CliError {
    fn from(e: BusError) -> Self {
        match e {
            BusError::InvalidParameter(_) => CliError::Data(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

/// Output directory that refuses to overwrite any of the run's inputs.
pub struct Output {
    dir: PathBuf,
    inputs: Vec<PathBuf>,
}

impl Output {
    pub fn create(dir: &Path, inputs: &[&Path]) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            inputs: inputs.iter().filter_map(|p| p.canonicalize().ok()).collect(),
        })
    }

    pub fn write(&self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        if let Ok(c) = path.canonicalize() {
            if self.inputs.contains(&c) {
                return Err(CliError::Usage(format!("refusing to overwrite input file {}", path.display())));
            }
        }
        fs::write(&path, contents).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut s = serde_json::to_string_pretty(value).expect("outputs serialize");
        s.push('\n');
        self.write(name, &s)
    }
}

pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let file = fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Dataset::from_reader(std::io::BufReader::new(file))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// The configured dataset, or a freshly generated synthetic one.
fn dataset(data: &Option<PathBuf>, config: &RunConfig) -> Result<Dataset, CliError> {
    match data {
        Some(p) => load_dataset(p),
        None => Ok(generate(&config.synthetic)?),
    }
}

#[derive(Serialize)]
struct BenchRow {
    #[serde(flatten)]
    stats: LoopRateStats,
    predicted_hz: f64,
    /// Two packets per device and nothing else.
    ceiling_hz: f64,
    hardware_mean_hz: Option<f64>,
    hardware_std_hz: Option<f64>,
}

#[derive(Serialize)]
struct BenchReport {
    calibration: OverheadCalibration,
    rows: Vec<BenchRow>,
}

pub fn bus_bench(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let bench = config.bench;
    if !(1..=4).contains(&bench.devices) || bench.iterations == 0 {
        return Err(CliError::Usage(format!(
            "bench needs 1..=4 devices and at least one iteration, got {} and {}",
            bench.devices, bench.iterations
        )));
    }
    let measured: Vec<(usize, f64)> = MEASURED_LOOP_RATES[..2].iter().map(|r| (r.device_count, r.mean_hz)).collect();
    let calibration = calibrate_overheads(&measured, &config.bus);
    let mut rows = Vec::new();
    for n in 1..=bench.devices {
        let stats = measure_loop_rate(n, bench.iterations, &config.bus)?;
        let hardware = MEASURED_LOOP_RATES.iter().find(|r| r.device_count == n);
        rows.push(BenchRow {
            stats,
            predicted_hz: 1.0 / predicted_period(n, &config.bus),
            ceiling_hz: 1.0 / (n as f64 * config.bus.protocol_floor()),
            hardware_mean_hz: hardware.map(|r| r.mean_hz),
            hardware_std_hz: hardware.map(|r| r.std_hz),
        });
    }

    let opt = |v: Option<f64>| v.map(|v| format!("{v:.1}")).unwrap_or_default();
    let mut csv = String::from("devices,iterations,mean_hz,std_hz,predicted_hz,ceiling_hz,hardware_mean_hz,hardware_std_hz\n");
    println!(
        "{:>7} {:>10} {:>10} {:>12} {:>10} {:>10} {:>10}",
        "devices", "mean_hz", "std_hz", "predicted_hz", "ceiling_hz", "hw_mean", "hw_std"
    );
    for r in &rows {
        let s = &r.stats;
        let _ = writeln!(
            csv,
            "{},{},{:.3},{:.3},{:.3},{:.3},{},{}",
            s.device_count,
            s.iterations,
            s.mean_hz,
            s.std_hz,
            r.predicted_hz,
            r.ceiling_hz,
            opt(r.hardware_mean_hz),
            opt(r.hardware_std_hz)
        );
        println!(
            "{:>7} {:>10.1} {:>10.1} {:>12.1} {:>10.1} {:>10} {:>10}",
            s.device_count,
            s.mean_hz,
            s.std_hz,
            r.predicted_hz,
            r.ceiling_hz,
            opt(r.hardware_mean_hz),
            opt(r.hardware_std_hz)
        );
    }
    out.write("loop_rates.csv", &csv)?;
    out.write_json("bench.json", &BenchReport { calibration, rows })
}

#[derive(Serialize)]
struct StepReport {
    p0_kpa: f64,
    p_cmd_kpa: f64,
    trials: usize,
    /// Per trial, per chamber.
    metrics: Vec<[StepMetrics; CHAMBERS]>,
    all_settled: bool,
    max_band_width_kpa: f64,
}

pub fn step(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let s = config.step;
    if s.trials == 0 || !(s.duration_s > 0.0) {
        return Err(CliError::Usage("step needs trials >= 1 and a positive duration".into()));
    }
    let r = step_trials(
        &config.device,
        gauge_kpa_to_abs_pa(s.p0_kpa),
        gauge_kpa_to_abs_pa(s.p_cmd_kpa),
        s.duration_s,
        s.trials,
    )?;
    let mut width: f64 = 0.0;
    for c in 0..CHAMBERS {
        let mut csv = String::from("t_s,mean_kpa,lower_kpa,upper_kpa\n");
        for k in 0..r.t.len() {
            width = width.max(r.upper[k][c] - r.lower[k][c]);
            let _ = writeln!(
                csv,
                "{:.4},{:.6},{:.6},{:.6}",
                r.t[k],
                abs_pa_to_gauge_kpa(r.mean[k][c]),
                abs_pa_to_gauge_kpa(r.lower[k][c]),
                abs_pa_to_gauge_kpa(r.upper[k][c])
            );
        }
        out.write(&format!("step_chamber{c}.csv"), &csv)?;
    }
    let all_settled = r.metrics.iter().flatten().all(|m| m.settled());
    println!(
        "{} trials, {} -> {} kPa: {}, max 95% band width {:.3} kPa",
        s.trials,
        s.p0_kpa,
        s.p_cmd_kpa,
        if all_settled { "all chambers settled" } else { "NOT all chambers settled" },
        width * 1e-3
    );
    out.write_json(
        "step_metrics.json",
        &StepReport {
            p0_kpa: s.p0_kpa,
            p_cmd_kpa: s.p_cmd_kpa,
            trials: s.trials,
            metrics: r.metrics,
            all_settled,
            max_band_width_kpa: width * 1e-3,
        },
    )
}

#[derive(Serialize)]
struct TrackReport {
    on_bus: bool,
    /// Per device, per chamber, Pa s.
    iae_pa_s: Vec<[f64; CHAMBERS]>,
    /// Per device, per chamber, Pa.
    max_abs_error_pa: Vec<[f64; CHAMBERS]>,
}

pub fn track(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let t = config.track;
    if !(1..=4).contains(&t.devices) || !(t.duration_s > 0.0) {
        return Err(CliError::Usage("track needs 1..=4 devices and a positive duration".into()));
    }
    let rate = config.device.controller.control_rate;
    let n = (t.duration_s * rate).round() as usize;
    let references: Vec<Reference> = (0..t.devices)
        .map(|i| match t.reference {
            TrackReference::Sinusoid {
                mean_kpa,
                amplitude_kpa,
                frequency_hz,
                phases_rad,
            } => Reference::sinusoid(
                gauge_kpa_to_abs_pa(mean_kpa),
                amplitude_kpa * 1e3,
                frequency_hz,
                phases_rad,
                n,
                rate,
            ),
            TrackReference::RandomSteps(r) => Reference::random_steps(
                n,
                rate,
                gauge_kpa_to_abs_pa(r.lo_kpa),
                gauge_kpa_to_abs_pa(r.hi_kpa),
                r.hold_min_s,
                r.hold_max_s,
                r.transition_s,
                config.device.seed.wrapping_add(i as u64),
            ),
        })
        .collect();
    let mut devices = Vec::with_capacity(t.devices);
    for (i, r) in references.iter().enumerate() {
        let mut cfg = config.device.clone();
        cfg.seed = cfg.seed.wrapping_add(i as u64);
        let address = DeviceAddress::from_index(i).expect("index checked");
        let mut dev = EmulatedDevice::new(address, cfg)?;
        if let Some(first) = r.p_des.first() {
            dev.set_pressures(*first);
        }
        devices.push(dev);
    }
    let logs = if t.on_bus {
        track_on_bus(devices, &references, config.bus)?
    } else {
        devices
            .iter_mut()
            .zip(&references)
            .map(|(d, r)| track_trajectory(d, r))
            .collect::<Result<_, _>>()?
    };
    let mut report = TrackReport {
        on_bus: t.on_bus,
        iae_pa_s: Vec::new(),
        max_abs_error_pa: Vec::new(),
    };
    for (i, log) in logs.iter().enumerate() {
        out.write(&format!("track_device{i}.csv"), &log.recording.data.to_csv_string())?;
        let mut worst = [0.0f64; CHAMBERS];
        for e in log.errors() {
            for c in 0..CHAMBERS {
                worst[c] = worst[c].max(e[c].abs());
            }
        }
        println!(
            "device {i}: IAE [{}] Pa s",
            log.iae.iter().map(|v| format!("{v:.1}")).collect::<Vec<_>>().join(", ")
        );
        report.iae_pa_s.push(log.iae);
        report.max_abs_error_pa.push(worst);
    }
    out.write_json("track_summary.json", &report)
}

pub fn generate_dataset(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let data = generate(&config.synthetic)?;
    println!("{} samples at {} Hz", data.len(), data.sample_rate);
    out.write("dataset.csv", &data.to_csv_string())
}

#[derive(Serialize)]
struct FitTimings {
    fit_wall_time_s: Vec<f64>,
}

pub fn fit_models(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let f = &config.fit;
    if let Some(&c) = f.chambers.iter().find(|&&c| c >= CHAMBERS) {
        return Err(CliError::Usage(format!("chamber {c} out of range 0..{CHAMBERS}")));
    }
    let mut data = dataset(&f.data, config)?;
    if let Some(n) = f.train_samples {
        data = data.slice(0..n.min(data.len()));
    }
    let mut results: Vec<FitResult> = Vec::new();
    for &c in &f.chambers {
        let r = fit(f.model, &data, c, &f.context, &f.options)?;
        println!(
            "{} chamber {c}: train R^2 {:.6}, {}/{} restarts converged",
            f.model, r.r_squared, r.n_converged, r.n_restarts
        );
        results.push(r);
    }
    out.write_json(&format!("fit_{}.json", f.model), &results)?;
    out.write_json(
        "timings.json",
        &FitTimings {
            fit_wall_time_s: results.iter().map(|r| r.fit_wall_time).collect(),
        },
    )
}

pub fn compare(config: &RunConfig, out: &Output) -> Result<(), CliError> {
    let c = &config.compare;
    let data = dataset(&c.data, config)?;
    if c.train_samples < 3 || c.train_samples + 3 > data.len() {
        return Err(CliError::Usage(format!(
            "train_samples {} leaves no room for validation in {} samples",
            c.train_samples,
            data.len()
        )));
    }
    let (train, validation) = data.split(c.train_samples)?;
    let cmp = compare_models(&train, &validation, &c.context, &c.options)?;
    let report = &cmp.report;

    // Open-loop validation predictions for plotting.
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for ch in 0..CHAMBERS {
        columns.push((format!("p{ch}_measured_kpa"), validation.pressure(ch)));
        for kind in ModelKind::ALL {
            if let Some(params) = report.cell(kind, ch).and_then(|cell| cell.params) {
                if let Ok(pred) = predict_open_loop(&params, &validation, ch) {
                    columns.push((format!("p{ch}_{kind}_kpa"), pred));
                }
            }
        }
    }
    let mut csv = String::from("t_s");
    for (name, _) in &columns {
        csv.push(',');
        csv.push_str(name);
    }
    csv.push('\n');
    for k in 0..validation.len() {
        let _ = write!(csv, "{:.4}", validation.t[k]);
        for (_, v) in &columns {
            let _ = write!(csv, ",{:.6}", abs_pa_to_gauge_kpa(v[k]));
        }
        csv.push('\n');
    }

    println!("{:>10} {:>7} {:>14} {:>10} {:>12}", "model", "chamber", "iae_pa_s", "r2_pdot", "r2_pressure");
    for cell in &report.cells {
        let f = |v: Option<f64>, p: usize| v.map(|v| format!("{v:.p$}")).unwrap_or_else(|| "-".into());
        println!(
            "{:>10} {:>7} {:>14} {:>10} {:>12}",
            cell.model_kind.as_str(),
            cell.chamber,
            f(cell.iae, 1),
            f(cell.r_squared, 4),
            f(cell.r_squared_pressure, 5)
        );
    }

    out.write_json("comparison.json", report)?;
    out.write("comparison.csv", &report.to_csv())?;
    out.write("predictions.csv", &csv)?;
    out.write_json("timings.json", &cmp.timings)
}
