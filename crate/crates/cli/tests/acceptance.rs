//! Acceptance suite: one test per criterion, each printing a single
//! `ACCEPTANCE PASS|FAIL <name>: <details>` line. Run with
//! `cargo test -p pneu-cli --test acceptance -- --nocapture` to see every
//! line, not just the failures.
//!
//! Tests share one lock so the runtime budgets are measured without the
//! other criteria competing for the CPU.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use pneu_core::bus_sim::{
    calibrate_overheads, measure_loop_rate, write_enable_duration, BusTimingConfig, MEASURED_LOOP_RATES,
};
use pneu_core::controller::{step_response, step_trials, DeviceConfig, EmulatedDevice};
use pneu_core::dynamics::{
    chamber_volumes, flow_function, gauge_kpa_to_abs_pa, integrate, psi_max, Excitation, FlowConstants,
    GasConstants, JointGeometry, JointState, LinearParams, ModelKind, ModelParams, CHAMBERS,
};
use pneu_core::sysid::{
    compare_models, fit, generate, metrics, predict_open_loop, Dataset, FitContext, FitOptions, SyntheticConfig,
};
use pneu_core::wire_protocol::{
    assign_addresses, decode_stream, encode_packet, packet_time, Packet, PACKET_BYTES, PAYLOAD_MAX,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Print the verdict line and fail the test if any check failed.
fn verdict(name: &str, checks: &[(bool, String)]) {
    let ok = checks.iter().all(|(pass, _)| *pass);
    let detail = checks
        .iter()
        .map(|(pass, d)| format!("{}{d}", if *pass { "" } else { "[FAIL] " }))
        .collect::<Vec<_>>()
        .join("; ");
    println!("ACCEPTANCE {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn bundled_dataset() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/dataset.csv")
}

#[test]
fn protocol_round_trip() {
    let _g = serial();
    let start = Instant::now();
    let addresses = assign_addresses(4).unwrap();
    let round_trip = |address: u16, payload: [u16; 4]| -> bool {
        let packet = Packet::new(address, payload);
        let expected = addresses.iter().find(|a| a.value == address).unwrap();
        let bytes = encode_packet(&packet).unwrap();
        bytes.len() == PACKET_BYTES && decode_stream(&bytes, *expected, &[0]).as_ref() == Ok(&packet)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut random_ok = 0;
    for _ in 0..10_000 {
        let a = addresses[rng.random_range(0..4)].value;
        let payload = std::array::from_fn(|_| rng.random_range(0..=PAYLOAD_MAX));
        random_ok += round_trip(a, payload) as usize;
    }

    let corners = [0u16, 1, 1022, 1023];
    let mut corner_total = 0;
    let mut corner_ok = 0;
    for a in &addresses {
        for i in 0..4usize.pow(4) {
            let payload = std::array::from_fn(|w| corners[(i >> (2 * w)) & 3]);
            corner_total += 1;
            corner_ok += round_trip(a.value, payload) as usize;
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    verdict(
        "protocol round-trip",
        &[
            (random_ok == 10_000, format!("{random_ok}/10000 random packets")),
            (corner_ok == corner_total, format!("{corner_ok}/{corner_total} address x corner-payload packets")),
            (elapsed < 1.0, format!("{elapsed:.3} s < 1 s")),
        ],
    );
}

#[test]
fn delimiter_safety() {
    let _g = serial();
    let addresses: Vec<u16> = assign_addresses(4).unwrap().iter().map(|a| a.value).collect();
    let min_address = *addresses.iter().min().unwrap();
    let aligned_clash = (0..=PAYLOAD_MAX).filter(|w| addresses.contains(w)).count();

    // A pair straddling words x, y at odd alignment reads hi(x) | lo(y) << 8.
    let mut worst = 0u16;
    for x in 0..=PAYLOAD_MAX {
        for y in 0..=PAYLOAD_MAX {
            let [_, hi] = x.to_le_bytes();
            let [lo, _] = y.to_le_bytes();
            worst = worst.max(u16::from_le_bytes([hi, lo]));
        }
    }
    let bound = 0x03 + 0xFF * 256;
    verdict(
        "delimiter safety",
        &[
            (aligned_clash == 0, format!("{aligned_clash} of 1024 payload words equal an address")),
            (worst <= bound, format!("max straddling pair {worst:#06x} <= {bound:#06x}")),
            (worst < min_address, format!("max straddling pair {worst:#06x} < lowest address {min_address:#06x}")),
        ],
    );
}

#[test]
fn timing_math() {
    let _g = serial();
    let nominal = write_enable_duration(976.0, 0.1).unwrap() * 1e6;
    let corner = write_enable_duration(976.0 * 0.99, 0.1 * 0.95).unwrap() * 1e6;
    let packet = packet_time(1e6) * 1e6;
    verdict(
        "timing math",
        &[
            ((nominal - 107.36).abs() < 0.01, format!("nominal pulse {nominal:.4} us = 107.36 us")),
            ((nominal - 107.0).abs() <= 5.0, "inside 107 +- 5 us".into()),
            ((packet - 100.0).abs() < 0.01, format!("packet {packet:.4} us")),
            (corner > packet, format!("-1% R, -5% C corner {corner:.4} us > packet")),
        ],
    );
}

#[test]
fn loop_rate_reproduction() {
    let _g = serial();
    let start = Instant::now();
    let config = BusTimingConfig::default();
    let rates: Vec<f64> = (1..=3).map(|n| measure_loop_rate(n, 2044, &config).unwrap().mean_hz).collect();
    let elapsed = start.elapsed().as_secs_f64();
    let row3 = MEASURED_LOOP_RATES[2].mean_hz;
    let rel = (rates[2] - row3).abs() / row3;

    // Monotone under a sweep of nonnegative overheads, jitter-free.
    let mut monotone = true;
    for s in [0.0, 1e-6, 1e-5, 1e-4, 5e-4, 1e-3, 1e-2] {
        for t in [0.0, 1e-6, 5e-6, 1e-5, 1e-4, 1e-3] {
            let cfg = BusTimingConfig {
                per_sweep_overhead_s: s,
                per_transaction_overhead_s: t,
                ..BusTimingConfig::ideal()
            };
            let r: Vec<f64> = (1..=4).map(|n| measure_loop_rate(n, 20, &cfg).unwrap().mean_hz).collect();
            monotone &= r.windows(2).all(|w| w[0] > w[1]);
        }
    }
    let cal = calibrate_overheads(&[(1, 1164.3), (2, 980.9)], &BusTimingConfig::ideal());
    verdict(
        "loop-rate reproduction (calibrated)",
        &[
            (
                true,
                format!(
                    "calibrated per-sweep {:.1} us, per-transaction {:.1} us",
                    cal.per_sweep_s * 1e6,
                    cal.per_transaction_s * 1e6
                ),
            ),
            (rel < 0.20, format!("row 3 {:.1} Hz vs 749.5 Hz ({:.1}% off, < 20%)", rates[2], 100.0 * rel)),
            (
                rates.windows(2).all(|w| w[0] > w[1]),
                format!("simulated {:.1} > {:.1} > {:.1} Hz", rates[0], rates[1], rates[2]),
            ),
            (monotone, "monotone in N over 42 overhead configurations".into()),
            (elapsed < 5.0, format!("{elapsed:.2} s < 5 s for 3 x 2044 sweeps")),
        ],
    );
}

#[test]
fn flow_function_values() {
    let _g = serial();
    let gas = GasConstants::default();
    let flow = FlowConstants::default();
    let psi = psi_max(1.4);
    let p_u = 5e5;
    let at_b = flow_function(p_u, flow.b * p_u, &flow, &gas).unwrap();
    let past_b = flow_function(p_u, (flow.b + 1e-12) * p_u, &flow, &gas).unwrap();
    let at_one = flow_function(p_u, p_u, &flow, &gas).unwrap();
    verdict(
        "flow function",
        &[
            ((psi - 0.48435).abs() <= 1e-4, format!("psi_max(1.4) = {psi:.7} vs literal 0.48435 +- 1e-4")),
            ((at_b - past_b).abs() < 1e-9, format!("jump at ratio = b: {:.2e}", (at_b - past_b).abs())),
            (at_one == 0.0, format!("Psi(1) = {at_one}")),
        ],
    );
}

/// The choked value from the isentropic nozzle flow function,
/// `sqrt(g/(g-1) (r^(2/g) - r^((g+1)/g)))` at the critical ratio
/// `r = (2/(g+1))^(g/(g-1))`: a route that shares no code with `psi_max`.
#[test]
fn flow_function_independent_oracle() {
    let _g = serial();
    let g: f64 = 1.4;
    let r = (2.0 / (g + 1.0)).powf(g / (g - 1.0));
    let oracle = (g / (g - 1.0) * (r.powf(2.0 / g) - r.powf((g + 1.0) / g))).sqrt();
    let psi = psi_max(g);
    verdict(
        "flow function (independent evaluation, supplementary)",
        &[((psi - oracle).abs() <= 1e-4, format!("psi_max(1.4) = {psi:.7} vs oracle {oracle:.7}"))],
    );
}

#[test]
fn geometry() {
    let _g = serial();
    let geom = JointGeometry::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let qmax = 0.9 * geom.max_bend_rad();
    let (mut worst_len, mut worst_vdot, mut worst_fd) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..1000 {
        let state = JointState {
            q: [rng.random_range(-qmax..qmax), rng.random_range(-qmax..qmax)],
            q_dot: [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)],
        };
        let l = geom.lengths(state.q);
        let h2 = 2.0 * geom.h_m;
        worst_len = worst_len.max(((l[0] + l[1]) - h2).abs() / h2).max(((l[2] + l[3]) - h2).abs() / h2);
        let v: Vec<(f64, f64)> = (0..CHAMBERS).map(|c| chamber_volumes(c, &state, &geom).unwrap()).collect();
        let scale = v.iter().map(|x| x.1.abs()).fold(1e-30, f64::max);
        worst_vdot = worst_vdot.max((v[0].1 + v[1].1).abs() / scale).max((v[2].1 + v[3].1).abs() / scale);

        let eps = 1e-6;
        for (c, &(_, vdot)) in v.iter().enumerate() {
            let at = |s: f64| {
                let q = [state.q[0] + s * state.q_dot[0], state.q[1] + s * state.q_dot[1]];
                chamber_volumes(c, &JointState::at_rest(q), &geom).unwrap().0
            };
            let fd = (at(eps) - at(-eps)) / (2.0 * eps);
            if vdot.abs() > 1e-12 * scale {
                worst_fd = worst_fd.max((fd - vdot).abs() / vdot.abs());
            }
        }
    }
    verdict(
        "geometry",
        &[
            (worst_len <= 4.0 * f64::EPSILON, format!("max |l0+l1-2h|/2h = {worst_len:.1e}")),
            (worst_vdot <= 4.0 * f64::EPSILON, format!("max |V0'+V1'|/|V'| = {worst_vdot:.1e}")),
            (worst_fd < 1e-6, format!("max analytic vs finite-difference V' = {worst_fd:.1e}")),
        ],
    );
}

#[test]
fn integrator() {
    let _g = serial();
    let (alpha, p0, p_cmd) = (10.0, 1.5e5, 4e5);
    let params = LinearParams { alpha, beta: alpha };
    let tau = 1.0 / alpha;
    let max_rel_error = |dt: f64| {
        let n = (5.0 * tau / dt).round() as usize + 1;
        let inputs = vec![Excitation { p_cmd_pa: p_cmd, ..Excitation::default() }; n];
        let p = integrate(&params, 0, p0, &inputs, dt).unwrap();
        p.iter()
            .enumerate()
            .map(|(k, p)| {
                let exact = p_cmd + (p0 - p_cmd) * (-alpha * k as f64 * dt).exp();
                ((p - exact) / exact).abs()
            })
            .fold(0.0, f64::max)
    };
    let e: Vec<f64> = [0.01, 0.005, 0.0025].iter().map(|&dt| max_rel_error(dt)).collect();
    let orders: Vec<f64> = e.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    verdict(
        "integrator",
        &[
            (e[0] < 1e-3, format!("max relative error at 10 ms over 5 tau = {:.2e}", e[0])),
            (
                orders.iter().all(|&o| o >= 3.5),
                format!("observed orders {:.2}, {:.2}", orders[0], orders[1]),
            ),
        ],
    );
}

fn synthetic(plant: Option<ModelParams>, noise: f64) -> (Dataset, Dataset) {
    let mut cfg = SyntheticConfig::default();
    if let Some(p) = plant {
        cfg.device.plants = [p; CHAMBERS];
    }
    cfg.measurement_noise_rel = noise;
    generate(&cfg).unwrap().split(20_000).unwrap()
}

/// Fit every chamber; return (params, validation pdot R^2, pressure R^2).
fn fit_all(kind: ModelKind, train: &Dataset, val: &Dataset) -> Vec<(ModelParams, f64, f64)> {
    (0..CHAMBERS)
        .map(|c| {
            let r = fit(kind, train, c, &FitContext::default(), &FitOptions::default()).unwrap();
            let pred = predict_open_loop(&r.params, val, c).unwrap();
            let m = metrics(&pred, &val.pressure(c), val.dt()).unwrap();
            (r.params, m.r_squared, m.r_squared_pressure)
        })
        .collect()
}

fn fmt_all(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join("/")
}

#[test]
fn sysid_oracle_recovery() {
    let _g = serial();
    let truth = LinearParams { alpha: 3.0, beta: 3.2 };
    let (lin_train, lin_val) = synthetic(Some(ModelParams::Linear(truth)), 0.0);
    let (non_train, non_val) = synthetic(None, 0.0);
    let (noisy_train, noisy_val) = synthetic(None, 0.01);

    let start = Instant::now();
    let lin = fit_all(ModelKind::Linear, &lin_train, &lin_val);
    let non = fit_all(ModelKind::Nonlinear, &non_train, &non_val);
    let noisy = fit_all(ModelKind::Nonlinear, &noisy_train, &noisy_val);
    let elapsed = start.elapsed().as_secs_f64();

    let worst_param = lin
        .iter()
        .map(|(p, _, _)| match p {
            ModelParams::Linear(p) => ((p.alpha / truth.alpha - 1.0).abs()).max((p.beta / truth.beta - 1.0).abs()),
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max);
    let r2 = |v: &[(ModelParams, f64, f64)]| v.iter().map(|x| x.1).collect::<Vec<_>>();
    let (lin_r2, non_r2, noisy_r2) = (r2(&lin), r2(&non), r2(&noisy));
    verdict(
        "sysid oracle recovery",
        &[
            (worst_param < 0.01, format!("linear alpha, beta within {:.3}% (< 1%)", 100.0 * worst_param)),
            (lin_r2.iter().all(|&r| r > 0.99), format!("noiseless linear validation R^2 {}", fmt_all(&lin_r2))),
            (non_r2.iter().all(|&r| r > 0.99), format!("noiseless nonlinear validation R^2 {}", fmt_all(&non_r2))),
            (noisy_r2.iter().all(|&r| r > 0.95), format!("1% noise nonlinear validation R^2 {}", fmt_all(&noisy_r2))),
            (elapsed < 120.0, format!("12 fits x 20 restarts on 20000 points in {elapsed:.1} s (< 120 s)")),
        ],
    );
}

/// With measurement noise the pressure-rate R^2 is capped by the noise
/// itself. This reports that ceiling (the generating model's own score) and
/// the pressure R^2 of the fitted model.
#[test]
fn sysid_noisy_ceiling() {
    let _g = serial();
    let cfg = SyntheticConfig::default();
    let (train, val) = generate(&cfg).unwrap().split(20_000).unwrap();
    let mut ceiling = Vec::new();
    let mut gap = Vec::new();
    let mut pressure = Vec::new();
    for c in 0..CHAMBERS {
        let measured = val.pressure(c);
        let truth = predict_open_loop(&cfg.device.plants[c], &val, c).unwrap();
        let ceil = metrics(&truth, &measured, val.dt()).unwrap().r_squared;
        let r = fit(ModelKind::Nonlinear, &train, c, &FitContext::default(), &FitOptions::default()).unwrap();
        let pred = predict_open_loop(&r.params, &val, c).unwrap();
        let m = metrics(&pred, &measured, val.dt()).unwrap();
        ceiling.push(ceil);
        gap.push(ceil - m.r_squared);
        pressure.push(m.r_squared_pressure);
    }
    verdict(
        "sysid 1% noise: ceiling and pressure R^2 (supplementary)",
        &[
            (true, format!("generating model's own pdot R^2 {}", fmt_all(&ceiling))),
            (
                gap.iter().all(|g| g.abs() < 1e-3),
                format!("fitted model within {:.1e} of that ceiling", gap.iter().fold(0.0f64, |m, g| m.max(g.abs()))),
            ),
            (pressure.iter().all(|&r| r > 0.95), format!("pressure R^2 {}", fmt_all(&pressure))),
        ],
    );
}

#[test]
fn model_ordering() {
    let _g = serial();
    let file = std::fs::File::open(bundled_dataset()).expect("bundled dataset");
    let data = Dataset::from_reader(std::io::BufReader::new(file)).unwrap();
    let (train, val) = data.split(20_000).unwrap();
    let cmp = compare_models(&train, &val, &FitContext::default(), &FitOptions::default()).unwrap();
    let mut checks = Vec::new();
    for c in 0..CHAMBERS {
        let iae = |k| cmp.report.cell(k, c).and_then(|cell| cell.iae).unwrap_or(f64::INFINITY);
        let (lin, non) = (iae(ModelKind::Linear), iae(ModelKind::Nonlinear));
        checks.push((non < lin, format!("chamber {c} IAE nonlinear {non:.0} < linear {lin:.0} Pa s")));
    }
    let cost: BTreeMap<ModelKind, (f64, usize)> = cmp
        .timings
        .eval_cost
        .iter()
        .map(|e| (e.model_kind, (e.seconds_per_eval, e.evaluations)))
        .collect();
    let ns = |k| cost.get(&k).map_or(f64::NAN, |c| c.0 * 1e9);
    let enough = cost.len() == 3 && cost.values().all(|c| c.1 >= 100_000);
    let (l, p, n) = (ns(ModelKind::Linear), ns(ModelKind::Parametric), ns(ModelKind::Nonlinear));
    checks.push((
        enough && l < p && p < n,
        format!("eval cost linear {l:.1} < parametric {p:.1} < nonlinear {n:.1} ns (>= 1e5 evaluations each)"),
    ));
    verdict("model ordering", &checks);
}

#[test]
fn closed_loop_step() {
    let _g = serial();
    let (p0, p_cmd) = (gauge_kpa_to_abs_pa(50.0), gauge_kpa_to_abs_pa(300.0));
    let config = DeviceConfig::default();
    let mut device = EmulatedDevice::new(assign_addresses(1).unwrap()[0], config.clone()).unwrap();
    let r = step_response(&mut device, p0, p_cmd, 10.0).unwrap();
    let band = 0.05 * (p_cmd - p0);
    let mut checks = Vec::new();
    for c in 0..CHAMBERS {
        let m = r.metrics[c];
        let settle = m.settling_time_s.unwrap_or(f64::INFINITY);
        let k0 = (settle * config.controller.control_rate).round() as usize;
        let stays = r.recording.p_true[k0.min(r.recording.p_true.len())..]
            .iter()
            .all(|row| (row[c] - p_cmd).abs() <= band);
        checks.push((m.settled() && stays, format!("chamber {c} settles at {settle:.2} s and stays within +-5%")));
    }
    let trials = step_trials(&config, p0, p_cmd, 3.0, 10).unwrap();
    let width = trials
        .upper
        .iter()
        .zip(&trials.lower)
        .flat_map(|(u, l)| u.iter().zip(l).map(|(u, l)| u - l))
        .fold(0.0f64, f64::max);
    checks.push((width == 0.0, format!("10 noise-free trials: CI width {width}")));
    verdict("closed-loop step", &checks);
}

fn run_pneu(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_pneu")).args(args).output().expect("run pneu");
    assert!(
        out.status.success(),
        "pneu {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file in `dir` except the wall-clock timings.
fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.file_name() != "timings.json")
        .map(|e| (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap()))
        .collect()
}

#[test]
fn determinism() {
    let _g = serial();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("small.csv");
    run_pneu(&["generate", "--samples", "3000", "--seed", "5", "-o", tmp.path().join("gen").to_str().unwrap()]);
    std::fs::copy(tmp.path().join("gen/dataset.csv"), &data).unwrap();
    let data = data.to_str().unwrap();

    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("bus-bench", vec!["bus-bench", "--iterations", "500", "--seed", "9"]),
        ("step", vec!["step", "--seed", "9"]),
        ("track", vec!["track", "--devices", "2", "--seed", "9"]),
        ("generate", vec!["generate", "--samples", "3000", "--seed", "9"]),
        ("fit", vec!["fit", "--data", data, "--model", "nonlinear", "--restarts", "3", "--seed", "9"]),
        ("compare", vec!["compare", "--data", data, "--train-samples", "2500", "--restarts", "2", "--seed", "9"]),
    ];
    let mut checks = Vec::new();
    for (name, args) in runs {
        let dirs: Vec<PathBuf> = (0..2).map(|i| tmp.path().join(format!("{name}{i}"))).collect();
        for d in &dirs {
            let mut a = args.clone();
            a.extend(["-o", d.to_str().unwrap()]);
            run_pneu(&a);
        }
        let (a, b) = (outputs(&dirs[0]), outputs(&dirs[1]));
        checks.push((a == b && a.len() > 1, format!("{name}: {} files identical", a.len())));
    }
    verdict("determinism", &checks);
}
