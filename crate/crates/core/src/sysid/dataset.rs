//! Time-series datasets shared by the controller logs and the fitter.
//!
//! On disk a dataset is a CSV with one row per control tick:
//!
//! ```text
//! t,p_des0..p_des3,p0..p3,u0..u3,q_u,q_v,q_dot_u,q_dot_v
//! ```
//!
//! Time in seconds, pressures in gauge kPa, valve commands in volts, joint
//! angles in rad and rates in rad/s. In memory pressures are absolute Pa.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SysidError;
use crate::dynamics::{
    abs_pa_to_gauge_kpa, gauge_kpa_to_abs_pa, Excitation, JointState, CHAMBERS,
};

pub const COLUMNS: [&str; 17] = [
    "t", "p_des0", "p_des1", "p_des2", "p_des3", "p0", "p1", "p2", "p3", "u0", "u1", "u2", "u3",
    "q_u", "q_v", "q_dot_u", "q_dot_v",
];

/// Largest allowed deviation of any sample interval from the median one.
pub const GRID_TOLERANCE: f64 = 0.01;

/// Sample rate assumed for datasets too short to have an interval.
pub const DEFAULT_SAMPLE_RATE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub t: Vec<f64>,
    /// Commanded pressure per chamber, absolute Pa.
    pub p_des: Vec<[f64; CHAMBERS]>,
    /// Measured pressure per chamber, absolute Pa.
    pub p: Vec<[f64; CHAMBERS]>,
    /// Valve command per chamber, V.
    pub u: Vec<[f64; CHAMBERS]>,
    pub joint: Vec<JointState>,
    pub sample_rate: f64,
}

impl Dataset {
    pub fn with_capacity(n: usize, sample_rate: f64) -> Self {
        Self {
            t: Vec::with_capacity(n),
            p_des: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
            u: Vec::with_capacity(n),
            joint: Vec::with_capacity(n),
            sample_rate,
        }
    }

    pub fn push(&mut self, t: f64, p_des: [f64; CHAMBERS], p: [f64; CHAMBERS], u: [f64; CHAMBERS], joint: JointState) {
        self.t.push(t);
        self.p_des.push(p_des);
        self.p.push(p);
        self.u.push(u);
        self.joint.push(joint);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Measured pressure of one chamber.
    pub fn pressure(&self, chamber: usize) -> Vec<f64> {
        self.p.iter().map(|p| p[chamber]).collect()
    }

    pub fn command(&self, chamber: usize) -> Vec<f64> {
        self.p_des.iter().map(|p| p[chamber]).collect()
    }

    /// Recorded inputs of one chamber, one per sample.
    pub fn excitations(&self, chamber: usize) -> Vec<Excitation> {
        (0..self.len())
            .map(|k| Excitation {
                p_cmd_pa: self.p_des[k][chamber],
                u_volts: self.u[k][chamber],
                joint: self.joint[k],
            })
            .collect()
    }

    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            t: self.t[range.clone()].to_vec(),
            p_des: self.p_des[range.clone()].to_vec(),
            p: self.p[range.clone()].to_vec(),
            u: self.u[range.clone()].to_vec(),
            joint: self.joint[range].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// First `n_train` samples for fitting, the rest for validation.
    pub fn split(&self, n_train: usize) -> Result<(Self, Self), SysidError> {
        if n_train > self.len() {
            return Err(SysidError::InvalidParameter(format!(
                "cannot take {n_train} training rows from {} rows",
                self.len()
            )));
        }
        Ok((self.slice(0..n_train), self.slice(n_train..self.len())))
    }

    /// Copy with Gaussian noise on the measured pressures, `rel` times the
    /// standard deviation of each chamber's pressure.
    pub fn with_measurement_noise(&self, rel: f64, seed: u64) -> Self {
        let mut out = self.clone();
        if rel <= 0.0 || self.len() < 2 {
            return out;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigmas: Vec<f64> = (0..CHAMBERS).map(|c| rel * std_dev(&self.pressure(c))).collect();
        for row in &mut out.p {
            for (c, p) in row.iter_mut().enumerate() {
                if sigmas[c] > 0.0 {
                    *p += Normal::new(0.0, sigmas[c]).expect("finite sigma").sample(&mut rng);
                }
            }
        }
        out
    }

    /// Check the invariants: equal column lengths, finite values and a
    /// uniform time grid.
    pub fn validate(&self) -> Result<(), SysidError> {
        let n = self.len();
        if [self.p_des.len(), self.p.len(), self.u.len(), self.joint.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(SysidError::InvalidParameter("dataset columns differ in length".into()));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(SysidError::InvalidParameter(format!(
                "sample rate must be positive, got {}",
                self.sample_rate
            )));
        }
        for k in 0..n {
            let row = [
                &[self.t[k]][..],
                &self.p_des[k],
                &self.p[k],
                &self.u[k],
                &self.joint[k].q,
                &self.joint[k].q_dot,
            ];
            if row.iter().flat_map(|s| s.iter()).any(|v| !v.is_finite()) {
                return Err(SysidError::Load {
                    line: k + 2,
                    message: "non-finite value".into(),
                });
            }
        }
        check_grid(&self.t, self.dt())
    }

    pub fn from_csv_str(s: &str) -> Result<Self, SysidError> {
        Self::from_reader(s.as_bytes())
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, SysidError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| SysidError::Load {
                line: 1,
                message: e.to_string(),
            })?
            .clone();
        let mut idx = [0usize; COLUMNS.len()];
        for (slot, name) in idx.iter_mut().zip(COLUMNS) {
            *slot = headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| SysidError::MissingColumn(name.to_string()))?;
        }

        let mut ds = Dataset::default();
        for (k, rec) in rdr.records().enumerate() {
            let line = k + 2;
            let rec = rec.map_err(|e| SysidError::Load {
                line,
                message: e.to_string(),
            })?;
            let mut v = [0.0; COLUMNS.len()];
            for (j, &col) in idx.iter().enumerate() {
                let field = rec.get(col).ok_or_else(|| SysidError::Load {
                    line,
                    message: format!("missing field `{}`", COLUMNS[j]),
                })?;
                let x: f64 = field.parse().map_err(|_| SysidError::Load {
                    line,
                    message: format!("`{}` is not a number: {field:?}", COLUMNS[j]),
                })?;
                if !x.is_finite() {
                    return Err(SysidError::Load {
                        line,
                        message: format!("`{}` is not finite", COLUMNS[j]),
                    });
                }
                v[j] = x;
            }
            let p_des = [v[1], v[2], v[3], v[4]].map(gauge_kpa_to_abs_pa);
            let p = [v[5], v[6], v[7], v[8]].map(gauge_kpa_to_abs_pa);
            let u = [v[9], v[10], v[11], v[12]];
            let joint = JointState {
                q: [v[13], v[14]],
                q_dot: [v[15], v[16]],
            };
            ds.push(v[0], p_des, p, u, joint);
        }

        ds.sample_rate = match median_interval(&ds.t) {
            Some(dt) if dt > 0.0 => 1.0 / dt,
            Some(_) => {
                return Err(SysidError::NonUniformGrid {
                    line: 3,
                    dt: ds.t[1] - ds.t[0],
                    expected: 0.0,
                })
            }
            None => DEFAULT_SAMPLE_RATE,
        };
        check_grid(&ds.t, ds.dt())?;
        Ok(ds)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SysidError> {
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| SysidError::Io(e.to_string());
        w.write_record(COLUMNS).map_err(io)?;
        let mut fields: Vec<String> = Vec::with_capacity(COLUMNS.len());
        for k in 0..self.len() {
            fields.clear();
            fields.push(fmt_num(self.t[k]));
            fields.extend(self.p_des[k].iter().map(|&p| fmt_num(abs_pa_to_gauge_kpa(p))));
            fields.extend(self.p[k].iter().map(|&p| fmt_num(abs_pa_to_gauge_kpa(p))));
            fields.extend(self.u[k].iter().map(|&u| fmt_num(u)));
            let j = &self.joint[k];
            fields.extend([j.q[0], j.q[1], j.q_dot[0], j.q_dot[1]].iter().map(|&x| fmt_num(x)));
            w.write_record(&fields).map_err(io)?;
        }
        w.flush().map_err(|e| SysidError::Io(e.to_string()))
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Fixed-precision formatting so files are stable and compact.
fn fmt_num(x: f64) -> String {
    let s = format!("{x:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn median_interval(t: &[f64]) -> Option<f64> {
    if t.len() < 2 {
        return None;
    }
    let mut d: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    d.sort_by(|a, b| a.total_cmp(b));
    Some(d[d.len() / 2])
}

fn check_grid(t: &[f64], dt: f64) -> Result<(), SysidError> {
    for (k, w) in t.windows(2).enumerate() {
        let d = w[1] - w[0];
        if (d - dt).abs() > GRID_TOLERANCE * dt {
            return Err(SysidError::NonUniformGrid {
                // data row k + 1 is on line k + 3 (header is line 1)
                line: k + 3,
                dt: d,
                expected: dt,
            });
        }
    }
    Ok(())
}

pub(crate) fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}
