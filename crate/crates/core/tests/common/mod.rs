//! Fixtures shared by the integration test targets.
#![allow(dead_code)]

use exploregs::align::ImageVars;
use exploregs::geom::{so3_exp, CameraModel, Pose, Vec3};
use exploregs::simworld::{build_world, VoxelScene, WorldSpec};
use exploregs::twoview::{OracleBackend, PairPrediction};

pub fn room() -> VoxelScene {
    build_world(&WorldSpec::default()).unwrap()
}

/// Six cameras near the room center, headings 60° apart, each seeing part of
/// its neighbors' walls.
pub fn loop_poses() -> Vec<Pose> {
    (0..6)
        .map(|k| {
            let th = k as f64 * std::f64::consts::PI / 3.0;
            let pos = Vec3::new(3.0 + 0.4 * th.cos(), 3.0 + 0.4 * th.sin(), 2.8 + 0.15 * (k % 2) as f64);
            Pose::from_position_yaw(pos, th + 0.3)
        })
        .collect()
}

pub fn loop_camera() -> CameraModel {
    CameraModel::centered(64, 48, 32.0)
}

/// Noiseless oracle predictions around the loop (k, k+1 mod 6), plus the
/// pairs' frame ids as given.
pub fn loop_predictions(scene: &VoxelScene, poses: &[Pose], pairs: &[(usize, usize)]) -> Vec<PairPrediction> {
    let o = OracleBackend { scene, cam: loop_camera(), noise_sigma: 0.0, dropout: 0.0, seed: 1 };
    pairs.iter().map(|&(i, k)| o.infer(i, &poses[i], k, &poses[k]).unwrap()).collect()
}

pub fn ring_pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).map(|k| (k.min((k + 1) % n), k.max((k + 1) % n))).collect()
}

/// Ground-truth variables in the gauge of the first pose (identity, scale 1).
pub fn gauge_truth(poses: &[Pose]) -> Vec<ImageVars> {
    let inv0 = poses[0].inverse();
    poses.iter().map(|p| ImageVars { log_scale: 0.0, pose: inv0.compose(p) }).collect()
}

/// Rotates by `deg` about a fixed skewed axis, shifts by `shift` m and
/// multiplies the scale by `scale`, for every image except the gauge.
pub fn perturb(truth: &[ImageVars], deg: f64, shift: f64, scale: f64) -> Vec<ImageVars> {
    truth
        .iter()
        .enumerate()
        .map(|(n, v)| {
            if n == 0 {
                return *v;
            }
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            let axis = Vec3::new(1.0, sign * 2.0, 0.5).normalize();
            let dir = Vec3::new(sign * 0.3, 1.0, -0.6).normalize();
            ImageVars {
                log_scale: v.log_scale + scale.ln(),
                pose: Pose::new(v.pose.rotation * so3_exp(&(axis * deg.to_radians())), v.pose.translation + dir * shift),
            }
        })
        .collect()
}
