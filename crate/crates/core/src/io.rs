//! File formats: trajectories, track CSVs, intrinsics, descriptor blobs and
//! estimate dumps.
//!
//! Trajectory lines are `timestamp tx ty tz qx qy qz qw` (quaternion w-last),
//! whitespace separated, with `#` starting a comment. A frame's id is its
//! 0-based index after sorting by timestamp. Track files refer to frames by
//! that index.

use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Quaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{Covariance6, Pose, Rotation};
use crate::locator::isometric_sigmas;
use crate::scene::{Frame, FrameId, Intrinsics, Observation, PoseEstimate, Source};

pub const DESCRIPTOR_MAGIC: &[u8; 4] = b"GLDC";
pub const DESCRIPTOR_VERSION: u32 = 1;
pub const TRACKS_HEADER: &str = "frame_id,point_id,u,v";

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(i) => &line[..i],
        None => line,
    }
    .trim()
}

/// Parses trajectory text. `path` is only used in error messages.
pub fn parse_trajectory(text: &str, path: &Path) -> Result<Vec<Frame>> {
    let mut rows: Vec<(f64, Pose)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = strip_comment(raw);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(path, line_no, format!("bad number: {e}")))?;
        if fields.len() != 8 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 8 fields, found {}", fields.len()),
            ));
        }
        if fields.iter().any(|v| !v.is_finite()) {
            return Err(Error::parse(path, line_no, "non-finite value"));
        }
        let q = Quaternion::new(fields[7], fields[4], fields[5], fields[6]);
        let norm = q.norm();
        if !(0.999..=1.001).contains(&norm) {
            return Err(Error::NonUnitQuaternion {
                line: line_no,
                norm,
            });
        }
        let pose = Pose::new(
            Rotation::from_quaternion(&q),
            Vector3::new(fields[1], fields[2], fields[3]),
        );
        rows.push((fields[0], pose));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(i, (ts, pose))| Frame {
            timestamp: Some(ts),
            ..Frame::with_pose(i as FrameId, pose)
        })
        .collect())
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<Vec<Frame>> {
    let path = path.as_ref();
    parse_trajectory(&read_text(path)?, path)
}

pub fn format_trajectory_line(timestamp: f64, pose: &Pose) -> String {
    let p = pose.position();
    let q = pose.rotation().to_quaternion();
    format!(
        "{} {} {} {} {} {} {} {}",
        timestamp, p.x, p.y, p.z, q.i, q.j, q.k, q.w
    )
}

/// Writes frames with a pose; frames without a timestamp use their id.
pub fn write_trajectory(path: impl AsRef<Path>, frames: &[Frame]) -> Result<()> {
    let mut out = String::new();
    for f in frames {
        let pose = f.pose()?;
        out.push_str(&format_trajectory_line(
            f.timestamp.unwrap_or(f.id as f64),
            pose,
        ));
        out.push('\n');
    }
    write_text(path.as_ref(), &out)
}

pub fn parse_tracks(text: &str, path: &Path) -> Result<Vec<Observation>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break Some((i, l)),
            None => break None,
        }
    };
    let Some((hidx, header)) = header else {
        return Ok(Vec::new());
    };
    let header = header.trim_start_matches('\u{feff}').trim();
    if header.replace(' ', "") != TRACKS_HEADER {
        return Err(Error::parse(
            path,
            hidx + 1,
            format!("expected header `{TRACKS_HEADER}`, found `{header}`"),
        ));
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let bad = |what: &str, e: &dyn std::fmt::Display| {
            Error::parse(path, line_no, format!("bad {what}: {e}"))
        };
        let frame_id: u64 = cols[0].parse().map_err(|e| bad("frame_id", &e))?;
        let point_id: u64 = cols[1].parse().map_err(|e| bad("point_id", &e))?;
        let u: f64 = cols[2].parse().map_err(|e| bad("u", &e))?;
        let v: f64 = cols[3].parse().map_err(|e| bad("v", &e))?;
        if !u.is_finite() || !v.is_finite() {
            return Err(Error::parse(path, line_no, "non-finite pixel"));
        }
        if !seen.insert((frame_id, point_id)) {
            return Err(Error::DuplicateObservation { frame_id, point_id });
        }
        out.push(Observation::new(frame_id, point_id, u, v));
    }
    Ok(out)
}

pub fn load_tracks(path: impl AsRef<Path>) -> Result<Vec<Observation>> {
    let path = path.as_ref();
    parse_tracks(&read_text(path)?, path)
}

pub fn write_tracks(path: impl AsRef<Path>, observations: &[Observation]) -> Result<()> {
    let mut out = String::from(TRACKS_HEADER);
    out.push('\n');
    for o in observations {
        out.push_str(&format!(
            "{},{},{},{}\n",
            o.frame_id, o.point_id, o.pixel.x, o.pixel.y
        ));
    }
    write_text(path.as_ref(), &out)
}

/// Accepts `key: value` lines (`fx`, `fy`, `cx`, `cy`, optional `width`,
/// `height`) or four bare numbers `fx fy cx cy` spread over any lines.
pub fn parse_intrinsics(text: &str, path: &Path) -> Result<Intrinsics> {
    let body: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, strip_comment(l)))
        .filter(|(_, l)| !l.is_empty())
        .collect();
    let keyed = body.iter().any(|(_, l)| l.contains(':'));
    let k = if keyed {
        let (mut fx, mut fy, mut cx, mut cy, mut w, mut h) = (None, None, None, None, None, None);
        for &(line_no, l) in &body {
            let (key, value) = l
                .split_once(':')
                .ok_or_else(|| Error::parse(path, line_no, "expected `key: value`"))?;
            let value: f64 = value
                .trim()
                .parse()
                .map_err(|e| Error::parse(path, line_no, format!("bad value: {e}")))?;
            let slot = match key.trim() {
                "fx" => &mut fx,
                "fy" => &mut fy,
                "cx" => &mut cx,
                "cy" => &mut cy,
                "width" => &mut w,
                "height" => &mut h,
                other => {
                    return Err(Error::parse(path, line_no, format!("unknown key `{other}`")))
                }
            };
            *slot = Some(value);
        }
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| Error::parse(path, 0, format!("missing `{name}`")))
        };
        let mut k = Intrinsics::new(need(fx, "fx")?, need(fy, "fy")?, need(cx, "cx")?, need(cy, "cy")?)?;
        k.width = w;
        k.height = h;
        k
    } else {
        let mut values = Vec::new();
        for &(line_no, l) in &body {
            for tok in l.split_whitespace() {
                values.push(
                    tok.parse::<f64>()
                        .map_err(|e| Error::parse(path, line_no, format!("bad number: {e}")))?,
                );
            }
        }
        if values.len() != 4 {
            return Err(Error::parse(
                path,
                body.last().map_or(0, |b| b.0),
                format!("expected 4 numbers (fx fy cx cy), found {}", values.len()),
            ));
        }
        Intrinsics::new(values[0], values[1], values[2], values[3])?
    };
    Ok(k)
}

pub fn load_intrinsics(path: impl AsRef<Path>) -> Result<Intrinsics> {
    let path = path.as_ref();
    parse_intrinsics(&read_text(path)?, path)
}

pub fn write_intrinsics(path: impl AsRef<Path>, k: &Intrinsics) -> Result<()> {
    let mut out = format!("fx: {}\nfy: {}\ncx: {}\ncy: {}\n", k.fx, k.fy, k.cx, k.cy);
    if let (Some(w), Some(h)) = (k.width, k.height) {
        out.push_str(&format!("width: {w}\nheight: {h}\n"));
    }
    write_text(path.as_ref(), &out)
}

/// Little-endian: magic `GLDC`, u32 version, u32 count, u32 dim, then
/// `count` records of (u64 frame id, `dim` × f32).
pub fn write_descriptors(path: impl AsRef<Path>, entries: &[(FrameId, Vec<f32>)]) -> Result<()> {
    let path = path.as_ref();
    let dim = entries.first().map_or(0, |e| e.1.len());
    if let Some(bad) = entries.iter().find(|e| e.1.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.1.len(),
        });
    }
    let io = |e| Error::io(path, e);
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    w.write_all(DESCRIPTOR_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(DESCRIPTOR_VERSION).map_err(io)?;
    w.write_u32::<LittleEndian>(entries.len() as u32).map_err(io)?;
    w.write_u32::<LittleEndian>(dim as u32).map_err(io)?;
    for (id, v) in entries {
        w.write_u64::<LittleEndian>(*id).map_err(io)?;
        for x in v {
            w.write_f32::<LittleEndian>(*x).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_descriptors(path: impl AsRef<Path>) -> Result<Vec<(FrameId, Vec<f32>)>> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let file = File::open(path).map_err(io)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != DESCRIPTOR_MAGIC {
        return Err(Error::parse(path, 0, "bad descriptor magic"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != DESCRIPTOR_VERSION {
        return Err(Error::parse(path, 0, format!("unsupported descriptor version {version}")));
    }
    let count = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(io)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.read_u64::<LittleEndian>().map_err(io)?;
        let mut v = vec![0f32; dim];
        r.read_f32_into::<LittleEndian>(&mut v).map_err(io)?;
        out.push((id, v));
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(io)?;
    if !rest.is_empty() {
        return Err(Error::parse(path, 0, "trailing bytes after descriptor records"));
    }
    Ok(out)
}

/// One entry of the covariance sidecar written by [`save_estimates`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub frame_id: FrameId,
    pub timestamp: f64,
    pub source: Source,
    /// Row-major 6×6.
    pub covariance: Covariance6,
    pub sigma_p: f64,
    pub sigma_r: f64,
}

/// Sidecar path for [`save_estimates`]: the trajectory path with its
/// extension replaced by `json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes a trajectory file plus a JSON sidecar with covariances, source
/// tags and isometric sigmas.
pub fn save_estimates(path: impl AsRef<Path>, estimates: &[PoseEstimate]) -> Result<()> {
    let path = path.as_ref();
    let sidecar = sidecar_path(path);
    if sidecar == path {
        return Err(Error::io(
            path,
            std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                "trajectory path must not use the .json extension",
            ),
        ));
    }
    let mut traj = String::new();
    let mut records = Vec::with_capacity(estimates.len());
    for e in estimates {
        let ts = e.timestamp.unwrap_or(e.frame_id as f64);
        traj.push_str(&format_trajectory_line(ts, &e.pose));
        traj.push('\n');
        let (sigma_p, sigma_r) = isometric_sigmas(&e.covariance)?;
        records.push(EstimateRecord {
            frame_id: e.frame_id,
            timestamp: ts,
            source: e.source,
            covariance: e.covariance,
            sigma_p,
            sigma_r,
        });
    }
    write_text(path, &traj)?;
    let json = serde_json::to_string_pretty(&records).expect("records serialize");
    write_text(&sidecar, &json)
}

pub fn load_estimate_records(path: impl AsRef<Path>) -> Result<Vec<EstimateRecord>> {
    let path = path.as_ref();
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Error::parse(path, e.line(), e.to_string()))
}
