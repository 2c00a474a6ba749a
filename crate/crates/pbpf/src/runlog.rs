//! Replayable run logs.
//!
//! A log is `# key = value` header lines followed by a CSV table with one row
//! per observation frame:
//!
//! ```text
//! t,ux,uy,uz,uyaw,gt_px,gt_py,gt_pz,gt_qw,gt_qx,gt_qy,gt_qz,obs_present,obs_px,...,obs_qz
//! ```
//!
//! Row `k` carries the pusher motion executed during the frame ending at
//! `t`, the true pose at `t`, and the estimator output at `t` (empty
//! observation columns when absent). Numbers use Rust's shortest round-trip
//! formatting, so a written log parses back to identical values and
//! re-serializes to identical bytes.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use pbpf_core::physics::{Control, Rect, SceneModel};
use pbpf_core::{Pose, Vec3};

pub const FORMAT: &str = "pbpf-runlog-1";

pub const COLUMNS: [&str; 20] = [
    "t", "ux", "uy", "uz", "uyaw", "gt_px", "gt_py", "gt_pz", "gt_qw", "gt_qx", "gt_qy", "gt_qz", "obs_present",
    "obs_px", "obs_py", "obs_pz", "obs_qw", "obs_qx", "obs_qy", "obs_qz",
];

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing header key `{0}`")]
    MissingKey(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn parse_err(line: usize, message: impl Into<String>) -> LogError {
    LogError::Parse { line, message: message.into() }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHeader {
    pub scenario: String,
    pub scenario_hash: String,
    pub seed: u64,
    pub frame_period: f64,
    pub scene: SceneModel,
    pub pusher_start: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Record {
    pub t: f64,
    /// Pusher displacement `(ux, uy, uz)` over the frame ending at `t`.
    pub displacement: Vec3,
    pub yaw: f64,
    pub truth: Pose,
    pub observation: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub records: Vec<Record>,
}

impl RunLog {
    /// Full controls per record, with the pusher start reconstructed by
    /// accumulating displacements from the header's starting point. Record
    /// 0 gets a zero-duration-free hold control it never uses.
    pub fn controls(&self) -> Vec<Control> {
        let fp = self.header.frame_period;
        let mut at = self.header.pusher_start;
        self.records
            .iter()
            .enumerate()
            .map(|(k, r)| {
                if k == 0 {
                    return Control::hold(at, fp);
                }
                let c = Control { pusher_start: at, displacement: r.displacement, yaw: r.yaw, duration: fp };
                at += r.displacement;
                c
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), LogError> {
        let h = &self.header;
        let mut head = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(head, "# {k} = {v}");
        };
        kv("format", FORMAT.to_string());
        kv("scenario", h.scenario.clone());
        kv("scenario_hash", h.scenario_hash.clone());
        kv("seed", h.seed.to_string());
        kv("frame_period", h.frame_period.to_string());
        kv("object_half_extents", join(&h.scene.half_extents));
        kv("object_height", h.scene.height.to_string());
        kv("pusher_radius", h.scene.pusher_radius.to_string());
        kv("gravity", h.scene.gravity.to_string());
        kv("pusher_start", join(&h.pusher_start.to_array()));
        for o in &h.scene.obstacles {
            kv("obstacle", join(&[o.center[0], o.center[1], o.half_extents[0], o.half_extents[1], o.yaw]));
        }
        w.write_all(head.as_bytes())?;

        let mut csv = csv::WriterBuilder::new().from_writer(w);
        csv.write_record(COLUMNS)?;
        let mut row: Vec<String> = Vec::with_capacity(COLUMNS.len());
        for r in &self.records {
            row.clear();
            row.push(r.t.to_string());
            row.extend(r.displacement.to_array().iter().map(f64::to_string));
            row.push(r.yaw.to_string());
            row.extend(r.truth.to_array().iter().map(f64::to_string));
            match r.observation {
                Some(p) => {
                    row.push("1".into());
                    row.extend(p.to_array().iter().map(f64::to_string));
                }
                None => {
                    row.push("0".into());
                    row.extend(std::iter::repeat_n(String::new(), 7));
                }
            }
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), LogError> {
        let file = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<RunLog, LogError> {
        let file = std::fs::File::open(path)?;
        RunLog::read_from(std::io::BufReader::new(file))
    }

    pub fn parse(text: &str) -> Result<RunLog, LogError> {
        RunLog::read_from(text.as_bytes())
    }

    pub fn read_from<R: BufRead>(reader: R) -> Result<RunLog, LogError> {
        let mut header = HeaderBuilder::default();
        let mut body = String::new();
        let mut body_start = 0;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if body_start == 0 {
                if let Some(rest) = line.strip_prefix('#') {
                    let (k, v) = rest
                        .split_once('=')
                        .ok_or_else(|| parse_err(lineno, "header line must be `# key = value`"))?;
                    header.set(k.trim(), v.trim(), lineno)?;
                    continue;
                }
                body_start = lineno;
            }
            body.push_str(&line);
            body.push('\n');
        }
        let header = header.finish()?;

        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
        let cols = rdr.headers()?.clone();
        if cols.iter().ne(COLUMNS.iter().copied()) {
            return Err(parse_err(body_start, "unexpected column layout"));
        }
        let mut records = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let line = body_start - 1 + row.position().map_or(0, |p| p.line() as usize);
            if row.len() != COLUMNS.len() {
                return Err(parse_err(line, format!("expected {} fields, got {}", COLUMNS.len(), row.len())));
            }
            let num = |i: usize| -> Result<f64, LogError> {
                row[i].parse::<f64>().map_err(|_| parse_err(line, format!("column `{}`: bad number `{}`", COLUMNS[i], &row[i])))
            };
            let pose = |from: usize| -> Result<Pose, LogError> {
                let mut a = [0.0; 7];
                for (j, v) in a.iter_mut().enumerate() {
                    *v = num(from + j)?;
                }
                Pose::from_array(a).map_err(|e| parse_err(line, e.to_string()))
            };
            let observation = match &row[12] {
                "1" => Some(pose(13)?),
                "0" => {
                    if (13..20).any(|i| !row[i].is_empty()) {
                        return Err(parse_err(line, "absent observation must leave pose columns empty"));
                    }
                    None
                }
                other => return Err(parse_err(line, format!("obs_present must be 0 or 1, got `{other}`"))),
            };
            let record = Record {
                t: num(0)?,
                displacement: Vec3::new(num(1)?, num(2)?, num(3)?),
                yaw: num(4)?,
                truth: pose(5)?,
                observation,
            };
            if let Some(prev) = records.last().map(|r: &Record| r.t) {
                if !(record.t > prev) {
                    return Err(parse_err(line, "timestamps must be strictly increasing"));
                }
            }
            records.push(record);
        }
        Ok(RunLog { header, records })
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(" ")
}

#[derive(Default)]
struct HeaderBuilder {
    format: Option<String>,
    scenario: Option<String>,
    scenario_hash: Option<String>,
    seed: Option<u64>,
    frame_period: Option<f64>,
    half_extents: Option<[f64; 2]>,
    height: Option<f64>,
    pusher_radius: Option<f64>,
    gravity: Option<f64>,
    pusher_start: Option<[f64; 3]>,
    obstacles: Vec<Rect>,
}

fn numbers<const N: usize>(v: &str, line: usize) -> Result<[f64; N], LogError> {
    let parts: Vec<&str> = v.split_whitespace().collect();
    if parts.len() != N {
        return Err(parse_err(line, format!("expected {N} numbers, got `{v}`")));
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p.parse().map_err(|_| parse_err(line, format!("bad number `{p}`")))?;
    }
    Ok(out)
}

impl HeaderBuilder {
    fn set(&mut self, key: &str, v: &str, line: usize) -> Result<(), LogError> {
        match key {
            "format" => {
                if v != FORMAT {
                    return Err(parse_err(line, format!("unsupported format `{v}`")));
                }
                self.format = Some(v.to_string());
            }
            "scenario" => self.scenario = Some(v.to_string()),
            "scenario_hash" => self.scenario_hash = Some(v.to_string()),
            "seed" => self.seed = Some(v.parse().map_err(|_| parse_err(line, "bad seed"))?),
            "frame_period" => self.frame_period = Some(numbers::<1>(v, line)?[0]),
            "object_half_extents" => self.half_extents = Some(numbers(v, line)?),
            "object_height" => self.height = Some(numbers::<1>(v, line)?[0]),
            "pusher_radius" => self.pusher_radius = Some(numbers::<1>(v, line)?[0]),
            "gravity" => self.gravity = Some(numbers::<1>(v, line)?[0]),
            "pusher_start" => self.pusher_start = Some(numbers(v, line)?),
            "obstacle" => {
                let [cx, cy, hx, hy, yaw] = numbers(v, line)?;
                self.obstacles.push(Rect::new([cx, cy], [hx, hy], yaw));
            }
            other => return Err(parse_err(line, format!("unknown header key `{other}`"))),
        }
        Ok(())
    }

    fn finish(self) -> Result<RunHeader, LogError> {
        self.format.ok_or(LogError::MissingKey("format"))?;
        let scene = SceneModel {
            half_extents: self.half_extents.ok_or(LogError::MissingKey("object_half_extents"))?,
            height: self.height.ok_or(LogError::MissingKey("object_height"))?,
            pusher_radius: self.pusher_radius.ok_or(LogError::MissingKey("pusher_radius"))?,
            gravity: self.gravity.ok_or(LogError::MissingKey("gravity"))?,
            obstacles: self.obstacles,
        };
        Ok(RunHeader {
            scenario: self.scenario.ok_or(LogError::MissingKey("scenario"))?,
            scenario_hash: self.scenario_hash.ok_or(LogError::MissingKey("scenario_hash"))?,
            seed: self.seed.ok_or(LogError::MissingKey("seed"))?,
            frame_period: self.frame_period.ok_or(LogError::MissingKey("frame_period"))?,
            scene,
            pusher_start: Vec3::from(self.pusher_start.ok_or(LogError::MissingKey("pusher_start"))?),
        })
    }
}

impl std::fmt::Display for RunLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut buf = Vec::new();
        self.write_to(&mut buf).map_err(|_| std::fmt::Error)?;
        f.write_str(std::str::from_utf8(&buf).map_err(|_| std::fmt::Error)?)
    }
}
