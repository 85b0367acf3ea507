//! CSV logs. Every file starts with a `#schema=<name>` line followed by a
//! header row. Floats use the shortest representation that parses back to
//! the same bits, so replayed streams are exact.

use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;
use wheelleg::estimator::{Estimate, SensorFrame};
use wheelleg::gait::{LEG_NAMES, NUM_LEGS};
use wheelleg::kinematics::{LegJointState, Mat3, Vec3};
use wheelleg::sim::TruthRecord;

pub const TRUTH_SCHEMA: &str = "wheelleg-truth-v1";
pub const SENSORS_SCHEMA: &str = "wheelleg-sensors-v1";
pub const ESTIMATE_SCHEMA: &str = "wheelleg-estimate-v1";

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("expected schema {expected}, found {found:?}")]
    Schema { expected: &'static str, found: String },
    #[error("row {row}: {msg}")]
    Parse { row: usize, msg: String },
}

fn leg_columns(fields: &[&str]) -> Vec<String> {
    LEG_NAMES
        .iter()
        .flat_map(|leg| fields.iter().map(move |f| format!("{}_{f}", leg.to_lowercase())))
        .collect()
}

fn xyz(prefix: &str) -> [String; 3] {
    ["x", "y", "z"].map(|a| format!("{prefix}_{a}"))
}

fn header(parts: &[&[String]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

pub fn truth_header() -> Vec<String> {
    let t = ["t".to_string()];
    let scalars = ["yaw".to_string(), "yaw_rate".to_string()];
    let legs = leg_columns(&[
        "x", "y", "z", "vx", "vy", "vz", "contact", "q1", "q2", "q3", "q4", "qd1", "qd2", "qd3", "qd4",
    ]);
    header(&[
        &t,
        &xyz("p"),
        &xyz("v"),
        &xyz("a"),
        &scalars,
        &xyz("p_drive"),
        &xyz("v_drive"),
        &legs,
    ])
}

pub fn sensors_header() -> Vec<String> {
    let t = ["t".to_string()];
    let rot: Vec<String> = (0..3).flat_map(|i| (0..3).map(move |j| format!("r{i}{j}"))).collect();
    let legs = leg_columns(&["q1", "q2", "q3", "q4", "qd1", "qd2", "qd3", "qd4", "expected"]);
    header(&[&t, &xyz("acc"), &xyz("gyro"), &rot, &legs])
}

pub fn estimate_header() -> Vec<String> {
    let t = ["t".to_string()];
    let trust = leg_columns(&["trust"]);
    let s_hat = leg_columns(&["s_hat"]);
    header(&[
        &t,
        &xyz("true_p"),
        &xyz("true_v"),
        &xyz("p"),
        &xyz("v"),
        &xyz("p_drive"),
        &xyz("v_drive"),
        &xyz("v_gait"),
        &trust,
        &s_hat,
    ])
}

struct Row(Vec<String>);

impl Row {
    fn new() -> Self {
        Self(Vec::with_capacity(80))
    }
    fn f(&mut self, v: f64) -> &mut Self {
        self.0.push(v.to_string());
        self
    }
    fn v(&mut self, v: &Vec3) -> &mut Self {
        self.f(v.x).f(v.y).f(v.z)
    }
    fn b(&mut self, v: bool) -> &mut Self {
        self.0.push(if v { "1" } else { "0" }.to_string());
        self
    }
}

fn writer<W: Write>(mut w: W, schema: &str, header: Vec<String>) -> Result<csv::Writer<W>, IoError> {
    writeln!(w, "#schema={schema}")?;
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

pub fn write_truth<W: Write>(w: W, truth: &[TruthRecord]) -> Result<(), IoError> {
    let mut out = writer(w, TRUTH_SCHEMA, truth_header())?;
    for r in truth {
        let mut row = Row::new();
        row.f(r.t).v(&r.position).v(&r.velocity).v(&r.acceleration).f(r.yaw).f(r.yaw_rate);
        row.v(&r.drive_position).v(&r.drive_velocity);
        for leg in 0..NUM_LEGS {
            row.v(&r.contacts[leg]).v(&r.contact_velocities[leg]).b(r.in_contact[leg]);
            for q in r.joints[leg].q.iter().chain(r.joints[leg].qdot.iter()) {
                row.f(*q);
            }
        }
        out.write_record(&row.0)?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_sensors<W: Write>(w: W, sensors: &[SensorFrame]) -> Result<(), IoError> {
    let mut out = writer(w, SENSORS_SCHEMA, sensors_header())?;
    for s in sensors {
        let mut row = Row::new();
        row.f(s.t).v(&s.accel).v(&s.gyro);
        for i in 0..3 {
            for j in 0..3 {
                row.f(s.rotation[(i, j)]);
            }
        }
        for leg in 0..NUM_LEGS {
            for q in s.joints[leg].q.iter().chain(s.joints[leg].qdot.iter()) {
                row.f(*q);
            }
            row.b(s.expected_contact[leg]);
        }
        out.write_record(&row.0)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes every `decimate`-th estimate next to its truth sample.
pub fn write_estimates<W: Write>(
    w: W,
    truth: &[TruthRecord],
    estimates: &[Estimate],
    decimate: usize,
) -> Result<(), IoError> {
    let mut out = writer(w, ESTIMATE_SCHEMA, estimate_header())?;
    let step = decimate.max(1);
    for (tr, e) in truth.iter().zip(estimates).step_by(step) {
        let mut row = Row::new();
        row.f(e.t).v(&tr.position).v(&tr.velocity).v(&e.position).v(&e.velocity);
        row.v(&e.drive_position).v(&e.drive_velocity).v(&e.gait_velocity);
        for c in e.trust {
            row.f(c);
        }
        for s in e.s_hat {
            row.b(s);
        }
        out.write_record(&row.0)?;
    }
    out.flush()?;
    Ok(())
}

fn reader<R: Read>(r: R, schema: &'static str, expected: Vec<String>) -> Result<csv::Reader<BufReader<R>>, IoError> {
    let mut buf = BufReader::new(r);
    let mut first = String::new();
    buf.read_line(&mut first)?;
    let found = first.trim_end();
    if found.strip_prefix("#schema=") != Some(schema) {
        return Err(IoError::Schema { expected: schema, found: found.to_string() });
    }
    let mut rd = csv::Reader::from_reader(buf);
    let hdr: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
    if hdr != expected {
        return Err(IoError::Schema { expected: schema, found: format!("header {}", hdr.join(",")) });
    }
    Ok(rd)
}

struct Fields<'a> {
    rec: &'a csv::StringRecord,
    at: usize,
    row: usize,
}

impl Fields<'_> {
    fn f(&mut self) -> Result<f64, IoError> {
        let raw = self.rec.get(self.at).ok_or_else(|| IoError::Parse { row: self.row, msg: "short row".into() })?;
        self.at += 1;
        raw.parse().map_err(|e| IoError::Parse { row: self.row, msg: format!("column {}: {e}", self.at) })
    }
    fn v(&mut self) -> Result<Vec3, IoError> {
        Ok(Vec3::new(self.f()?, self.f()?, self.f()?))
    }
    fn b(&mut self) -> Result<bool, IoError> {
        Ok(self.f()? != 0.0)
    }
    fn joints(&mut self) -> Result<LegJointState, IoError> {
        let mut j = LegJointState::default();
        for q in j.q.iter_mut().chain(j.qdot.iter_mut()) {
            *q = self.f()?;
        }
        Ok(j)
    }
}

pub fn read_truth<R: Read>(r: R) -> Result<Vec<TruthRecord>, IoError> {
    let mut rd = reader(r, TRUTH_SCHEMA, truth_header())?;
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let mut f = Fields { rec: &rec, at: 0, row };
        let t = f.f()?;
        let (position, velocity, acceleration) = (f.v()?, f.v()?, f.v()?);
        let (yaw, yaw_rate) = (f.f()?, f.f()?);
        let (drive_position, drive_velocity) = (f.v()?, f.v()?);
        let mut contacts = [Vec3::zeros(); NUM_LEGS];
        let mut contact_velocities = [Vec3::zeros(); NUM_LEGS];
        let mut in_contact = [false; NUM_LEGS];
        let mut joints = [LegJointState::default(); NUM_LEGS];
        for leg in 0..NUM_LEGS {
            contacts[leg] = f.v()?;
            contact_velocities[leg] = f.v()?;
            in_contact[leg] = f.b()?;
            joints[leg] = f.joints()?;
        }
        out.push(TruthRecord {
            t,
            position,
            velocity,
            acceleration,
            yaw,
            yaw_rate,
            rotation: wheelleg::kinematics::rotation_zyx(yaw, 0.0, 0.0),
            drive_position,
            drive_velocity,
            contacts,
            contact_velocities,
            in_contact,
            joints,
        });
    }
    Ok(out)
}

pub fn read_sensors<R: Read>(r: R) -> Result<Vec<SensorFrame>, IoError> {
    let mut rd = reader(r, SENSORS_SCHEMA, sensors_header())?;
    let mut out = Vec::new();
    for (row, rec) in rd.records().enumerate() {
        let rec = rec?;
        let mut f = Fields { rec: &rec, at: 0, row };
        let t = f.f()?;
        let (accel, gyro) = (f.v()?, f.v()?);
        let mut rotation = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                rotation[(i, j)] = f.f()?;
            }
        }
        let mut joints = [LegJointState::default(); NUM_LEGS];
        let mut expected_contact = [false; NUM_LEGS];
        for leg in 0..NUM_LEGS {
            joints[leg] = f.joints()?;
            expected_contact[leg] = f.b()?;
        }
        out.push(SensorFrame { t, accel, gyro, rotation, joints, expected_contact });
    }
    Ok(out)
}

/// `key=value` lines.
pub fn write_summary<W: Write>(mut w: W, pairs: &[(String, String)]) -> std::io::Result<()> {
    for (k, v) in pairs {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}
