use super::ExplorationConfig;
use crate::geom::{wrap_angle, Pose, Vec3};
use crate::simworld::{sample_pose, TimedPose};
use std::f64::consts::FRAC_PI_2;

/// A position and heading the trajectory passes through.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Knot {
    pub position: Vec3,
    pub yaw: f64,
}

/// Piecewise-linear timed trajectory through `knots`, starting at
/// `start_time`.
///
/// Each leg takes `max(length / v_max, |Δyaw| / yaw_max)` seconds, so both
/// limits hold at once; heading turns the short way round. Legs turning more
/// than π/2 are split into equal sub-legs so that rotation interpolation
/// between consecutive poses is unambiguous. Zero-length, zero-turn legs are
/// dropped.
pub fn plan_trajectory(knots: &[Knot], start_time: f64, cfg: &ExplorationConfig) -> Vec<TimedPose> {
    let Some(first) = knots.first() else { return Vec::new() };
    let mut t = start_time;
    let mut out = vec![TimedPose { time: t, pose: Pose::from_position_yaw(first.position, first.yaw) }];
    let mut yaw = first.yaw;
    for pair in knots.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let d = b.position - a.position;
        let dyaw = wrap_angle(b.yaw - yaw);
        let len = d.norm();
        let duration = (len / cfg.v_max).max(dyaw.abs() / cfg.yaw_max);
        if duration <= 0.0 {
            continue;
        }
        let pieces = (dyaw.abs() / FRAC_PI_2).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            let s = k as f64 / pieces as f64;
            let position = if k == pieces { b.position } else { a.position + d * s };
            let y = if k == pieces { wrap_angle(yaw + dyaw) } else { wrap_angle(yaw + dyaw * s) };
            out.push(TimedPose { time: t + duration * s, pose: Pose::from_position_yaw(position, y) });
        }
        t += duration;
        yaw = wrap_angle(yaw + dyaw);
    }
    out
}

/// Largest linear speed and yaw rate seen when sampling the trajectory at
/// `hz`, using finite differences between consecutive samples.
pub fn trajectory_rate_limits(trajectory: &[TimedPose], hz: f64) -> (f64, f64) {
    if trajectory.len() < 2 {
        return (0.0, 0.0);
    }
    let t0 = trajectory[0].time;
    let t1 = trajectory[trajectory.len() - 1].time;
    let dt = 1.0 / hz;
    let n = ((t1 - t0) * hz).ceil() as usize;
    let mut prev = sample_pose(trajectory, t0);
    let mut prev_t = t0;
    let (mut v, mut w) = (0.0f64, 0.0f64);
    for k in 1..=n {
        let t = (t0 + k as f64 * dt).min(t1);
        let h = t - prev_t;
        if h <= 0.0 {
            continue;
        }
        let p = sample_pose(trajectory, t);
        v = v.max((p.translation - prev.translation).norm() / h);
        w = w.max(wrap_angle(p.yaw() - prev.yaw()).abs() / h);
        prev = p;
        prev_t = t;
    }
    (v, w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn knot(x: f64, yaw: f64) -> Knot {
        Knot { position: Vec3::new(x, 0.0, 0.0), yaw }
    }

    #[test]
    fn translation_bound_segment() {
        let tr = plan_trajectory(&[knot(0.0, 0.0), knot(2.0, 0.0)], 0.0, &ExplorationConfig::default());
        assert_eq!(tr.len(), 2);
        assert_eq!(tr[1].time, 2.0);
    }

    #[test]
    fn yaw_bound_segment() {
        let cfg = ExplorationConfig::default();
        let tr = plan_trajectory(&[knot(0.0, 0.0), knot(0.5, PI)], 0.0, &cfg);
        assert!((tr.last().unwrap().time - PI).abs() < 1e-12);
        let (v, w) = trajectory_rate_limits(&tr, 100.0);
        assert!(v <= 1.0 + 1e-9 && w <= 1.0 + 1e-9, "{v} {w}");
        assert!(w > 0.99);
    }

    #[test]
    fn yaw_continuous_across_junctions() {
        let cfg = ExplorationConfig::default();
        let tr = plan_trajectory(&[knot(0.0, 0.0), knot(1.0, 2.5), knot(1.0, -2.5), knot(3.0, 0.4)], 1.0, &cfg);
        assert_eq!(tr[0].time, 1.0);
        for w in tr.windows(2) {
            assert!(w[1].time > w[0].time);
            assert!(wrap_angle(w[1].pose.yaw() - w[0].pose.yaw()).abs() <= FRAC_PI_2 + 1e-12);
        }
        let (v, w) = trajectory_rate_limits(&tr, 100.0);
        assert!(v <= 1.0 + 1e-9 && w <= 1.0 + 1e-9, "{v} {w}");
    }

    #[test]
    fn degenerate_legs_dropped() {
        let tr = plan_trajectory(&[knot(0.0, 0.0), knot(0.0, 0.0)], 0.0, &ExplorationConfig::default());
        assert_eq!(tr.len(), 1);
    }
}
