//! Plain-text trajectory files.
//!
//! Native format:
//!
//! ```text
//! DCAM-TRAJ v1 frames=<T> fx=<f> fy=<f> cx=<f> cy=<f> width=<W> height=<H>
//! r11 r12 r13 t1 r21 r22 r23 t2 r31 r32 r33 t3      (T lines, camera-to-world)
//! ```
//!
//! A line may carry 16 numbers instead of 12, in which case the first four
//! are that frame's `fx fy cx cy`. The RE10K-style import reads lines of
//! `timestamp fx fy cx cy 0 0 <3×4 world-to-camera>` with intrinsics
//! normalized by the image size.

use super::pose::{CameraTrajectory, Intrinsics, IntrinsicsSet, Pose};
use crate::error::{Error, Result};

const MAGIC: &str = "DCAM-TRAJ";
const VERSION: &str = "v1";

/// Largest rotation defect accepted from a file; smaller defects above the
/// pose tolerance are projected onto SO(3).
pub const PARSE_ROTATION_TOLERANCE: f64 = 1e-4;

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_numbers(line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>()
                .map_err(|_| parse_err(line_no, format!("'{tok}' is not a number")))
        })
        .collect()
}

fn pose_from(line_no: usize, v: &[f64]) -> Result<Pose> {
    let arr: [f64; 12] = v.try_into().expect("12 entries");
    Pose::from_row_major_3x4(&arr, PARSE_ROTATION_TOLERANCE).map_err(|e| parse_err(line_no, e.to_string()))
}

/// Parses a native trajectory file.
pub fn parse_trajectory(text: &str) -> Result<CameraTrajectory> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(n, l)| (n + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty trajectory file"))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(MAGIC) {
        return Err(parse_err(hline, format!("header must start with {MAGIC}")));
    }
    if tokens.next() != Some(VERSION) {
        return Err(parse_err(hline, format!("unsupported version, expected {VERSION}")));
    }
    let (mut frames, mut width, mut height) = (None, None, None);
    let (mut fx, mut fy, mut cx, mut cy) = (None, None, None, None);
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| parse_err(hline, format!("expected key=value, got '{tok}'")))?;
        let num = || {
            v.parse::<f64>()
                .map_err(|_| parse_err(hline, format!("{k}: '{v}' is not a number")))
        };
        let int = || {
            v.parse::<usize>()
                .map_err(|_| parse_err(hline, format!("{k}: '{v}' is not a count")))
        };
        match k {
            "frames" => frames = Some(int()?),
            "width" => width = Some(int()?),
            "height" => height = Some(int()?),
            "fx" => fx = Some(num()?),
            "fy" => fy = Some(num()?),
            "cx" => cx = Some(num()?),
            "cy" => cy = Some(num()?),
            other => return Err(parse_err(hline, format!("unknown header key '{other}'"))),
        }
    }
    let need = |v: Option<f64>, k: &str| v.ok_or_else(|| parse_err(hline, format!("missing '{k}'")));
    let frames = frames.ok_or_else(|| parse_err(hline, "missing 'frames'"))?;
    let width = width.ok_or_else(|| parse_err(hline, "missing 'width'"))?;
    let height = height.ok_or_else(|| parse_err(hline, "missing 'height'"))?;
    let shared = Intrinsics::new(need(fx, "fx")?, need(fy, "fy")?, need(cx, "cx")?, need(cy, "cy")?);

    let mut poses = Vec::with_capacity(frames);
    let mut per_frame = Vec::new();
    let mut last_line = hline;
    for (n, line) in lines {
        last_line = n;
        if poses.len() == frames {
            return Err(parse_err(n, format!("more than {frames} pose lines")));
        }
        let v = parse_numbers(n, line)?;
        match v.len() {
            12 => {
                if !per_frame.is_empty() {
                    return Err(parse_err(n, "mixed 12- and 16-column pose lines"));
                }
                poses.push(pose_from(n, &v)?);
            }
            16 => {
                if per_frame.len() != poses.len() {
                    return Err(parse_err(n, "mixed 12- and 16-column pose lines"));
                }
                per_frame.push(Intrinsics::new(v[0], v[1], v[2], v[3]));
                poses.push(pose_from(n, &v[4..])?);
            }
            k => return Err(parse_err(n, format!("expected 12 or 16 numbers, found {k}"))),
        }
    }
    if poses.len() != frames {
        return Err(parse_err(
            last_line,
            format!("header declares {frames} frames, found {}", poses.len()),
        ));
    }
    let set = if per_frame.is_empty() {
        IntrinsicsSet::Shared(shared)
    } else {
        IntrinsicsSet::PerFrame(per_frame)
    };
    CameraTrajectory::new(width, height, set, poses).map_err(|e| parse_err(hline, e.to_string()))
}

/// Writes a native trajectory file. `{}` formatting of `f64` is shortest
/// round-trip, so parsing the result recovers every entry exactly.
pub fn serialize_trajectory(traj: &CameraTrajectory) -> String {
    let k0 = traj.intrinsics_at(0);
    let mut out = format!(
        "{MAGIC} {VERSION} frames={} fx={} fy={} cx={} cy={} width={} height={}\n",
        traj.frame_count(),
        k0.fx,
        k0.fy,
        k0.cx,
        k0.cy,
        traj.width(),
        traj.height()
    );
    let per_frame = matches!(traj.intrinsics(), IntrinsicsSet::PerFrame(_));
    for (t, pose) in traj.poses().iter().enumerate() {
        let mut fields: Vec<String> = Vec::with_capacity(16);
        if per_frame {
            let k = traj.intrinsics_at(t);
            fields.extend([k.fx, k.fy, k.cx, k.cy].iter().map(|v| v.to_string()));
        }
        fields.extend(pose.to_row_major_3x4().iter().map(|v| v.to_string()));
        out.push_str(&fields.join(" "));
        out.push('\n');
    }
    out
}

/// Imports an RE10K-style camera file for an image of `width × height`.
///
/// A leading line that does not parse as numbers (the source URL in the
/// original files) is skipped.
pub fn import_re10k(text: &str, width: usize, height: usize) -> Result<CameraTrajectory> {
    let mut poses = Vec::new();
    let mut ks = Vec::new();
    let mut first = true;
    for (n, line) in text.lines().enumerate() {
        let n = n + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v = match parse_numbers(n, line) {
            Ok(v) => v,
            Err(_) if first => {
                first = false;
                continue;
            }
            Err(e) => return Err(e),
        };
        first = false;
        if v.len() != 19 {
            return Err(parse_err(n, format!("expected 19 numbers, found {}", v.len())));
        }
        let k = Intrinsics::new(
            v[1] * width as f64,
            v[2] * height as f64,
            v[3] * width as f64,
            v[4] * height as f64,
        );
        let w2c = pose_from(n, &v[7..19])?;
        poses.push(w2c.inverse());
        ks.push(k);
    }
    if poses.is_empty() {
        return Err(parse_err(1, "no camera lines found"));
    }
    let set = if ks.iter().all(|k| *k == ks[0]) {
        IntrinsicsSet::Shared(ks[0])
    } else {
        IntrinsicsSet::PerFrame(ks)
    };
    CameraTrajectory::new(width, height, set, poses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn sample_traj() -> CameraTrajectory {
        let poses = (0..4)
            .map(|k| {
                let r = Pose::from_axis_angle(Vector3::new(0.3, 1.0, -0.2), 0.17 * k as f64);
                Pose::new(*r.rotation(), Vector3::new(0.1 * k as f64, -0.7, 1.0 / 3.0)).unwrap()
            })
            .collect();
        CameraTrajectory::with_shared(64, 48, Intrinsics::new(55.5, 54.25, 31.5, 23.0), poses).unwrap()
    }

    #[test]
    fn native_round_trip_is_exact() {
        let traj = sample_traj();
        let back = parse_trajectory(&serialize_trajectory(&traj)).unwrap();
        assert_eq!(back, traj);
    }

    #[test]
    fn per_frame_intrinsics_round_trip() {
        let base = sample_traj();
        let ks = (0..4).map(|k| Intrinsics::new(50.0 + k as f64, 50.0, 32.0, 24.0)).collect();
        let traj = CameraTrajectory::new(64, 48, IntrinsicsSet::PerFrame(ks), base.poses().to_vec()).unwrap();
        let text = serialize_trajectory(&traj);
        assert_eq!(text.lines().nth(1).unwrap().split_whitespace().count(), 16);
        assert_eq!(parse_trajectory(&text).unwrap(), traj);
    }

    #[test]
    fn empty_file_is_rejected() {
        assert!(matches!(parse_trajectory(""), Err(Error::Parse { .. })));
        assert!(matches!(parse_trajectory("\n\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let mut text = serialize_trajectory(&sample_traj());
        text = text.replacen("-0.7", "oops", 1);
        match parse_trajectory(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn skewed_rotation_is_rejected() {
        let text = "DCAM-TRAJ v1 frames=1 fx=10 fy=10 cx=4 cy=4 width=8 height=8\n\
                    1 0.2 0 0 0 1 0 0 0 0 1 0\n";
        match parse_trajectory(text) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("orthonormal"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn frame_count_mismatch_is_rejected() {
        let text = "DCAM-TRAJ v1 frames=2 fx=10 fy=10 cx=4 cy=4 width=8 height=8\n\
                    1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(parse_trajectory(text).is_err());
    }

    #[test]
    fn re10k_line_is_inverted_to_camera_to_world() {
        let w2c = Pose::new(
            *Pose::from_axis_angle(Vector3::new(1.0, 2.0, 0.5), 0.4).rotation(),
            Vector3::new(0.3, -1.2, 2.0),
        )
        .unwrap();
        let m = w2c.to_matrix4();
        let mut line = String::from("12345 0.9 1.1 0.5 0.5 0 0");
        for r in 0..3 {
            for c in 0..4 {
                line.push_str(&format!(" {}", m[(r, c)]));
            }
        }
        let text = format!("https://example.invalid/video\n{line}\n");
        let traj = import_re10k(&text, 64, 32).unwrap();
        assert_eq!(traj.intrinsics_at(0), Intrinsics::new(57.6, 35.2, 32.0, 16.0));
        // oracle: general 4x4 inverse of the world-to-camera matrix
        let oracle = m.try_inverse().unwrap();
        let got = traj.poses()[0].to_matrix4();
        assert!((got - oracle).abs().max() < 1e-12);
    }

    #[test]
    fn re10k_rejects_short_lines() {
        assert!(import_re10k("1 0.5 0.5 0.5 0.5 0 0 1 0 0\n", 8, 8).is_err());
        assert!(import_re10k("", 8, 8).is_err());
    }
}
