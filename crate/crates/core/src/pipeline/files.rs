//! On-disk stage artifacts: frame directories, pose and timestamp lists,
//! trajectories, per-frame metrics.

use crate::geom::{Mat3, Pose, Vec3};
use crate::image::{DepthMap, RgbImage};
use crate::simworld::{GroundTruthFrame, TimedPose};
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

pub const POSES_FILE: &str = "poses.txt";
pub const TIMESTAMPS_FILE: &str = "timestamps.txt";

fn invalid(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn frame_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("frame_{id:05}.ppm"))
}

pub fn depth_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("depth_{id:05}.pgm"))
}

pub fn render_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(format!("render_{id:05}.ppm"))
}

pub fn pred_path(dir: &Path, i: usize, k: usize) -> PathBuf {
    dir.join(format!("pred_{i}_{k}.bin"))
}

/// Pose of one frame: camera-to-world rotation and translation plus the
/// frame's scale factor.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRecord {
    pub frame_id: usize,
    pub pose: Pose,
    pub scale: f64,
}

/// The twelve numbers `r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz`.
fn pose_fields(pose: &Pose) -> String {
    let (m, t) = (&pose.rotation, &pose.translation);
    let mut v = Vec::with_capacity(12);
    for row in 0..3 {
        for col in 0..3 {
            v.push(m[(row, col)].to_string());
        }
        v.push(t[row].to_string());
    }
    v.join(" ")
}

/// `frame_id r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz scale`.
pub fn pose_line(r: &PoseRecord) -> String {
    format!("{} {} {}", r.frame_id, pose_fields(&r.pose), r.scale)
}

fn parse_numbers(line: &str, n: usize, lineno: usize) -> io::Result<Vec<f64>> {
    let v: Vec<f64> = line
        .split_whitespace()
        .map(|x| x.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| invalid(format!("line {}: {e}", lineno + 1)))?;
    if v.len() != n {
        return Err(invalid(format!("line {}: expected {n} fields, got {}", lineno + 1, v.len())));
    }
    Ok(v)
}

fn pose_from_row_major(v: &[f64]) -> Pose {
    Pose::new(Mat3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]), Vec3::new(v[3], v[7], v[11]))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().map(|(n, l)| (n, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn parse_id(s: &str, lineno: usize) -> io::Result<usize> {
    s.parse().map_err(|e| invalid(format!("line {}: frame id: {e}", lineno + 1)))
}

pub fn format_poses(records: &[PoseRecord]) -> String {
    records.iter().map(|r| pose_line(r) + "\n").collect()
}

pub fn parse_poses(text: &str) -> io::Result<Vec<PoseRecord>> {
    content_lines(text)
        .map(|(n, line)| {
            let (id, rest) = line.split_once(char::is_whitespace).ok_or_else(|| invalid(format!("line {}: empty pose", n + 1)))?;
            let v = parse_numbers(rest, 13, n)?;
            let pose = pose_from_row_major(&v);
            if !pose.is_valid(1e-6) {
                return Err(invalid(format!("line {}: rotation is not orthonormal", n + 1)));
            }
            Ok(PoseRecord { frame_id: parse_id(id, n)?, pose, scale: v[12] })
        })
        .collect()
}

pub fn write_poses(path: &Path, records: &[PoseRecord]) -> io::Result<()> {
    fs::write(path, format_poses(records))
}

pub fn read_poses(path: &Path) -> io::Result<Vec<PoseRecord>> {
    parse_poses(&fs::read_to_string(path)?)
}

/// `frame_id timestamp` lines.
pub fn read_timestamps(path: &Path) -> io::Result<Vec<(usize, f64)>> {
    content_lines(&fs::read_to_string(path)?)
        .map(|(n, line)| {
            let mut it = line.split_whitespace();
            let (Some(id), Some(t), None) = (it.next(), it.next(), it.next()) else {
                return Err(invalid(format!("line {}: expected `frame_id timestamp`", n + 1)));
            };
            let t: f64 = t.parse().map_err(|e| invalid(format!("line {}: {e}", n + 1)))?;
            Ok((parse_id(id, n)?, t))
        })
        .collect()
}

/// `time r00 r01 r02 tx r10 r11 r12 ty r20 r21 r22 tz` lines.
pub fn format_trajectory(traj: &[TimedPose]) -> String {
    traj.iter().map(|p| format!("{} {}\n", p.time, pose_fields(&p.pose))).collect()
}

pub fn parse_trajectory(text: &str) -> io::Result<Vec<TimedPose>> {
    content_lines(text)
        .map(|(n, line)| {
            let v = parse_numbers(line, 13, n)?;
            Ok(TimedPose { time: v[0], pose: pose_from_row_major(&v[1..]) })
        })
        .collect()
}

/// Appends frames to a directory: images, depths, and the pose and
/// timestamp lists.
pub struct FrameWriter {
    dir: PathBuf,
    poses: BufWriter<File>,
    timestamps: BufWriter<File>,
}

impl FrameWriter {
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            poses: BufWriter::new(File::create(dir.join(POSES_FILE))?),
            timestamps: BufWriter::new(File::create(dir.join(TIMESTAMPS_FILE))?),
        })
    }

    pub fn write(&mut self, f: &GroundTruthFrame) -> io::Result<()> {
        f.rgb.save(&frame_path(&self.dir, f.frame_id))?;
        f.depth.save(&depth_path(&self.dir, f.frame_id))?;
        writeln!(self.poses, "{}", pose_line(&PoseRecord { frame_id: f.frame_id, pose: f.pose, scale: 1.0 }))?;
        writeln!(self.timestamps, "{} {}", f.frame_id, f.timestamp)?;
        Ok(())
    }

    pub fn finish(mut self) -> io::Result<()> {
        self.poses.flush()?;
        self.timestamps.flush()
    }
}

/// Frame ids and timestamps of a frame directory, in file order.
pub fn list_frames(dir: &Path) -> io::Result<Vec<(usize, f64)>> {
    read_timestamps(&dir.join(TIMESTAMPS_FILE))
}

pub fn load_rgb(dir: &Path, id: usize) -> io::Result<RgbImage> {
    RgbImage::load(&frame_path(dir, id))
}

/// Every frame of a directory with its image, depth, pose and timestamp.
pub fn load_frames(dir: &Path) -> io::Result<Vec<GroundTruthFrame>> {
    let poses = read_poses(&dir.join(POSES_FILE))?;
    list_frames(dir)?
        .into_iter()
        .map(|(id, timestamp)| {
            let pose = poses.iter().find(|p| p.frame_id == id).ok_or_else(|| invalid(format!("no pose for frame {id}")))?.pose;
            Ok(GroundTruthFrame { frame_id: id, rgb: load_rgb(dir, id)?, depth: DepthMap::load(&depth_path(dir, id))?, pose, timestamp })
        })
        .collect()
}

/// PSNR of one rendered view and of its constant mean-color baseline.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameMetric {
    pub frame_id: usize,
    pub psnr: f64,
    pub baseline_psnr: f64,
}

pub fn format_metrics(rows: &[FrameMetric]) -> String {
    let mut s = String::from("# frame_id psnr_db mean_color_psnr_db\n");
    for r in rows {
        s.push_str(&format!("{} {:.6} {:.6}\n", r.frame_id, r.psnr, r.baseline_psnr));
    }
    s
}

pub fn parse_metrics(text: &str) -> io::Result<Vec<FrameMetric>> {
    content_lines(text)
        .map(|(n, line)| {
            let (id, rest) = line.split_once(' ').ok_or_else(|| invalid(format!("line {}: too few fields", n + 1)))?;
            let v = parse_numbers(rest, 2, n)?;
            Ok(FrameMetric { frame_id: parse_id(id, n)?, psnr: v[0], baseline_psnr: v[1] })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3_exp;

    #[test]
    fn pose_lines_roundtrip_exactly() {
        let r = PoseRecord {
            frame_id: 17,
            pose: Pose::new(so3_exp(&Vec3::new(0.3, -1.2, 2.0)), Vec3::new(1.0 / 3.0, -2.5, 1e-17)),
            scale: 0.7,
        };
        let line = pose_line(&r);
        assert_eq!(line.split_whitespace().count(), 14);
        assert_eq!(parse_poses(&line).unwrap(), vec![r]);
    }

    #[test]
    fn trajectory_roundtrip() {
        let traj = vec![
            TimedPose { time: 0.0, pose: Pose::from_position_yaw(Vec3::new(1.0, 2.0, 3.0), 0.4) },
            TimedPose { time: 0.25, pose: Pose::from_position_yaw(Vec3::new(1.1, 2.0, 3.0), 0.5) },
        ];
        assert_eq!(parse_trajectory(&format_trajectory(&traj)).unwrap(), traj);
    }

    #[test]
    fn malformed_pose_lines() {
        assert!(parse_poses("3 1 0 0 0 0 1 0 0 0 0 1").is_err());
        assert!(parse_poses("3 2 0 0 0 0 1 0 0 0 0 1 0 1").is_err(), "non-orthonormal rotation");
        assert!(parse_poses("# comment\n\n").unwrap().is_empty());
    }
}
