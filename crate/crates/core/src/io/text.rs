//! Text formats: pose lists, the intrinsics JSON sidecar, point lists and
//! observation lists.
//!
//! Every text format shares the same conventions. `#` starts a comment that
//! runs to the end of the line (full-line or trailing), blank lines are
//! skipped, and fields are separated by any amount of whitespace. Writers
//! emit one canonical form — single spaces, one record per line — so files
//! diff cleanly across runs.
//!
//! * **Poses** — `name qw qx qy qz tx ty tz`, a world-to-camera transform
//!   per image, floats written to 9 significant digits. Camera intrinsics
//!   live in a JSON sidecar keyed by the same image names.
//! * **Points** — `point_id x y z`, coordinates written exactly (shortest
//!   round-trip form).
//! * **Observations** — `point_id image_id kp_x kp_y row`, tying a map
//!   point to a keypoint and descriptor row of one database image.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::types::{CameraIntrinsics, Observation, Point3D, Pose};

/// How far a parsed quaternion's norm may sit from 1 before the line is
/// rejected as corrupt rather than silently renormalized.
const QUAT_NORM_TOLERANCE: f64 = 1e-3;

fn parse_error(line: usize, message: impl std::fmt::Display) -> Error {
    Error::ParseError {
        line,
        message: message.to_string(),
    }
}

/// Iterate the payload-bearing lines of a text file: comments stripped,
/// blanks skipped, 1-based line numbers preserved.
fn payload_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            None
        } else {
            Some((i + 1, line))
        }
    })
}

fn parse_field<T: std::str::FromStr>(line: usize, token: &str, what: &str) -> Result<T> {
    token
        .parse::<T>()
        .map_err(|_| parse_error(line, format!("cannot parse {what} from \"{token}\"")))
}

fn parse_finite_f64(line: usize, token: &str, what: &str) -> Result<f64> {
    let v: f64 = parse_field(line, token, what)?;
    if !v.is_finite() {
        return Err(parse_error(line, format!("{what} is not finite")));
    }
    Ok(v)
}

fn parse_finite_f32(line: usize, token: &str, what: &str) -> Result<f32> {
    let v: f32 = parse_field(line, token, what)?;
    if !v.is_finite() {
        return Err(parse_error(line, format!("{what} is not finite")));
    }
    Ok(v)
}

// ---------------------------------------------------------------------------
// poses
// ---------------------------------------------------------------------------

/// Write named poses, one `name qw qx qy qz tx ty tz` line per image.
pub fn write_poses(path: impl AsRef<Path>, poses: &[(String, Pose)]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# name qw qx qy qz tx ty tz (world-to-camera)")?;
    for (name, pose) in poses {
        writeln!(w, "{}", format_pose_line(name, pose))?;
    }
    w.flush()?;
    Ok(())
}

/// One canonical pose line: single spaces, 9 significant digits.
pub fn format_pose_line(name: &str, pose: &Pose) -> String {
    let [qw, qx, qy, qz] = pose.quaternion_wxyz();
    let t = pose.translation();
    format!(
        "{name} {qw:.8e} {qx:.8e} {qy:.8e} {qz:.8e} {:.8e} {:.8e} {:.8e}",
        t.x, t.y, t.z
    )
}

/// Read a pose file. Names must be unique; quaternions must be unit to
/// within `1e-3` (then are renormalized exactly).
pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<(String, Pose)>> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<(String, Pose)> = Vec::new();
    for (line_no, line) in payload_lines(&text) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 8 {
            return Err(parse_error(
                line_no,
                format!("expected 8 fields (name + 7 numbers), got {}", tokens.len()),
            ));
        }
        let name = tokens[0].to_string();
        if out.iter().any(|(n, _)| *n == name) {
            return Err(parse_error(line_no, format!("duplicate image name \"{name}\"")));
        }
        let mut vals = [0.0f64; 7];
        for (slot, (v, what)) in vals.iter_mut().zip(tokens[1..].iter().zip([
            "qw", "qx", "qy", "qz", "tx", "ty", "tz",
        ])) {
            *slot = parse_finite_f64(line_no, v, what)?;
        }
        let q = Quaternion::new(vals[0], vals[1], vals[2], vals[3]);
        if (q.norm() - 1.0).abs() > QUAT_NORM_TOLERANCE {
            return Err(parse_error(
                line_no,
                format!("quaternion norm {:.6} is not 1 within {QUAT_NORM_TOLERANCE}", q.norm()),
            ));
        }
        let rotation = UnitQuaternion::new_normalize(q);
        let translation = Vector3::new(vals[4], vals[5], vals[6]);
        out.push((name, Pose::new(rotation, translation)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// intrinsics sidecar
// ---------------------------------------------------------------------------

/// Write the intrinsics sidecar: a JSON object keyed by image name.
///
/// A `BTreeMap` keeps key order (and therefore the file bytes) stable.
pub fn write_intrinsics(
    path: impl AsRef<Path>,
    intrinsics: &BTreeMap<String, CameraIntrinsics>,
) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, intrinsics)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Read the intrinsics sidecar.
pub fn read_intrinsics(path: impl AsRef<Path>) -> Result<BTreeMap<String, CameraIntrinsics>> {
    let text = fs::read_to_string(path)?;
    let map: BTreeMap<String, CameraIntrinsics> = serde_json::from_str(&text)?;
    for (name, k) in &map {
        if !k.is_valid() {
            return Err(parse_error(0, format!("invalid intrinsics for image \"{name}\"")));
        }
    }
    Ok(map)
}

/// Look up one image's intrinsics, failing with the image's name rather
/// than a bare `None`.
pub fn intrinsics_for<'a>(
    intrinsics: &'a BTreeMap<String, CameraIntrinsics>,
    name: &str,
) -> Result<&'a CameraIntrinsics> {
    intrinsics.get(name).ok_or_else(|| Error::MissingIntrinsics {
        name: name.to_string(),
    })
}

// ---------------------------------------------------------------------------
// points
// ---------------------------------------------------------------------------

/// Write map points, one `point_id x y z` line each. Coordinates use the
/// shortest exact decimal form, so the round trip is bit-exact.
pub fn write_points(path: impl AsRef<Path>, points: &[Point3D]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# point_id x y z")?;
    for p in points {
        writeln!(w, "{} {} {} {}", p.id, p.coord.x, p.coord.y, p.coord.z)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a points file. Ids must be unique.
pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<Point3D>> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<Point3D> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (line_no, line) in payload_lines(&text) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 4 {
            return Err(parse_error(
                line_no,
                format!("expected 4 fields (point_id x y z), got {}", tokens.len()),
            ));
        }
        let id: u64 = parse_field(line_no, tokens[0], "point id")?;
        if !seen.insert(id) {
            return Err(parse_error(line_no, format!("duplicate point id {id}")));
        }
        let x = parse_finite_f64(line_no, tokens[1], "x")?;
        let y = parse_finite_f64(line_no, tokens[2], "y")?;
        let z = parse_finite_f64(line_no, tokens[3], "z")?;
        out.push(Point3D::new(id, Vector3::new(x, y, z)));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// observations
// ---------------------------------------------------------------------------

/// Write observations, one `point_id image_id kp_x kp_y row` line each.
/// Keypoints use the shortest exact decimal form.
pub fn write_observations(path: impl AsRef<Path>, observations: &[Observation]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# point_id image_id kp_x kp_y descriptor_row")?;
    for o in observations {
        writeln!(
            w,
            "{} {} {} {} {}",
            o.point_id, o.image_id, o.keypoint[0], o.keypoint[1], o.descriptor_row
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Read an observations file. Referential integrity against the point and
/// image lists is deliberately not checked here — the codebook build does
/// that with full context and reports `DanglingReference`.
pub fn read_observations(path: impl AsRef<Path>) -> Result<Vec<Observation>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (line_no, line) in payload_lines(&text) {
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() != 5 {
            return Err(parse_error(
                line_no,
                format!(
                    "expected 5 fields (point_id image_id kp_x kp_y row), got {}",
                    tokens.len()
                ),
            ));
        }
        out.push(Observation {
            point_id: parse_field(line_no, tokens[0], "point id")?,
            image_id: parse_field(line_no, tokens[1], "image id")?,
            keypoint: [
                parse_finite_f32(line_no, tokens[2], "keypoint x")?,
                parse_finite_f32(line_no, tokens[3], "keypoint y")?,
            ],
            descriptor_row: parse_field(line_no, tokens[4], "descriptor row")?,
        });
    }
    Ok(out)
}
