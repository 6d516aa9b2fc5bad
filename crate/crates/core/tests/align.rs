mod common;

use common::*;
use exploregs::align::*;
use exploregs::geom::{so3_exp, CameraModel, Pose, Vec3};
use exploregs::image::RgbImage;
use exploregs::simworld::{raycast_rgbd, Cell};
use exploregs::twoview::{OracleBackend, PairPrediction};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn random_pose(rng: &mut ChaCha8Rng) -> Pose {
    let w = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
    let t = Vec3::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
    Pose::new(so3_exp(&w), t)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn project_inverts_backproject(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cam = CameraModel { width: 640, height: 480, fx: rng.random_range(50.0..800.0), fy: rng.random_range(50.0..800.0), cx: 320.0, cy: 240.0 };
        let pose = random_pose(&mut rng);
        let sigma = rng.random_range(0.1..10.0);
        let (u, v, z) = (rng.random_range(0.0..640.0), rng.random_range(0.0..480.0), rng.random_range(0.05..50.0));
        let x = backproject(sigma, &cam, &pose, z, u, v).unwrap();
        let (u2, v2, z2) = project(&cam, &pose, sigma, &x).unwrap();
        prop_assert!((u2 - u).abs() < 1e-9 && (v2 - v).abs() < 1e-9 && (z2 - z).abs() < 1e-9 * z.max(1.0));
    }
}

/// Random 3-image problem over 16×16 predictions with unrelated geometry, so
/// that residuals are large and every gradient component is exercised.
fn random_problem(seed: u64) -> (AlignProblem, Vec<ImageVars>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cam = CameraModel::centered(16, 16, 12.0);
    let preds: Vec<PairPrediction> = [(0, 1), (1, 2), (0, 2)]
        .iter()
        .map(|&(i, k)| {
            let mut p = PairPrediction::all_invalid(i, k, 16, 16);
            for view in p.views.iter_mut() {
                for px in 0..256 {
                    if rng.random::<f64>() < 0.9 {
                        view.valid[px] = true;
                        view.depth[px] = rng.random_range(1.0..4.0);
                        view.pointmap[px] = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..4.0));
                        view.confidence[px] = rng.random_range(0.05..1.0);
                    }
                }
            }
            p
        })
        .collect();
    let problem = AlignProblem::new(cam, &[0, 1, 2], &preds).unwrap();
    let vars = (0..3).map(|_| ImageVars { log_scale: rng.random_range(-0.3..0.3), pose: random_pose(&mut rng) }).collect();
    (problem, vars)
}

fn check_gradient(problem: &AlignProblem, vars: &[ImageVars], norm: ResidualNorm) {
    let (_, grad) = problem.gradient(vars, norm);
    let gmax = grad.iter().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    assert!(gmax > 0.0);
    assert_eq!(grad[0], [0.0; 7], "gauge image is fixed");
    let h = 1e-6;
    for n in 1..vars.len() {
        for c in 0..7 {
            let shifted = |s: f64| {
                let mut v = vars.to_vec();
                let mut d = [0.0; 7];
                d[c] = s;
                v[n] = v[n].retract(&d);
                problem.energy(&v, norm)
            };
            let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
            let g = grad[n][c];
            assert!((g - fd).abs() <= 1e-5 * gmax, "image {n} comp {c}: analytic {g} vs fd {fd}");
            if fd.abs() > 1e-2 * gmax {
                assert!((g - fd).abs() <= 1e-5 * fd.abs(), "image {n} comp {c}: analytic {g} vs fd {fd}");
            }
        }
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for seed in 0..5 {
        let (problem, vars) = random_problem(seed);
        check_gradient(&problem, &vars, ResidualNorm::Squared);
        check_gradient(&problem, &vars, ResidualNorm::Unsquared);
    }
}

#[test]
fn ground_truth_is_a_fixed_point() {
    let scene = room();
    let poses = loop_poses();
    let preds = loop_predictions(&scene, &poses, &ring_pairs(6));
    let problem = AlignProblem::new(loop_camera(), &[0, 1, 2, 3, 4, 5], &preds).unwrap();
    assert_eq!(problem.edge_count(), 6);
    let truth = gauge_truth(&poses);
    let sol = global_align(&problem, truth.clone(), &AlignOptions::default()).unwrap();
    assert!(sol.energy < 1e-12, "energy {}", sol.energy);
    assert_eq!(sol.iterations, 0);
    assert_eq!(sol.termination, Termination::GradientTolerance);
    assert_eq!(sol.vars, truth);
}

#[test]
fn spanning_tree_initialization_is_exact_without_noise() {
    let scene = room();
    let poses = loop_poses();
    let preds = loop_predictions(&scene, &poses, &ring_pairs(6));
    let problem = AlignProblem::new(loop_camera(), &[0, 1, 2, 3, 4, 5], &preds).unwrap();
    let init = problem.initialize();
    for (v, t) in init.iter().zip(gauge_truth(&poses)) {
        assert!(v.pose.rotation_angle_to(&t.pose) < 1e-6, "{:e}", v.pose.rotation_angle_to(&t.pose));
        assert!((v.pose.translation - t.pose.translation).norm() < 1e-8);
        assert!(v.log_scale.abs() < 1e-8);
    }
}

fn assert_recovered(sol: &AlignSolution, truth: &[ImageVars], tol_rot: f64, tol_t: f64, tol_s: f64) {
    for (n, (v, t)) in sol.vars.iter().zip(truth).enumerate() {
        let rot = v.pose.rotation_angle_to(&t.pose);
        let tr = (v.pose.translation - t.pose.translation).norm();
        let sc = (v.scale() / t.scale() - 1.0).abs();
        assert!(rot < tol_rot && tr < tol_t && sc < tol_s, "image {n}: rot {rot:e} trans {tr:e} scale {sc:e}");
    }
}

#[test]
fn perturbed_six_image_loop_converges() {
    let scene = room();
    let poses = loop_poses();
    let preds = loop_predictions(&scene, &poses, &ring_pairs(6));
    let problem = AlignProblem::new(loop_camera(), &[0, 1, 2, 3, 4, 5], &preds).unwrap();
    let truth = gauge_truth(&poses);
    let init = perturb(&truth, 5.0, 0.2, 1.2);
    let sol = global_align(&problem, init, &AlignOptions::default()).unwrap();
    assert_eq!(sol.termination, Termination::GradientTolerance);
    assert!(sol.iterations < 500, "iterations {}", sol.iterations);
    for w in sol.energies.windows(2) {
        assert!(w[1] <= w[0]);
    }
    assert_recovered(&sol, &truth, 1e-3, 1e-3, 1e-3);
}

#[test]
fn plain_gradient_descent_also_descends() {
    let scene = room();
    let poses = loop_poses();
    let preds = loop_predictions(&scene, &poses, &ring_pairs(6));
    let problem = AlignProblem::new(loop_camera(), &[0, 1, 2, 3, 4, 5], &preds).unwrap();
    let init = perturb(&gauge_truth(&poses), 5.0, 0.2, 1.2);
    let opts = AlignOptions { max_iters: 50, precondition: false, ..AlignOptions::default() };
    let sol = global_align(&problem, init, &opts).unwrap();
    assert!(sol.iterations > 0);
    assert!(sol.energies.windows(2).all(|w| w[1] <= w[0]));
    assert!(sol.energy < 0.5 * sol.energies[0]);
}

#[test]
fn single_edge_recovers_relative_pose() {
    let scene = room();
    let poses = loop_poses();
    let preds = loop_predictions(&scene, &poses, &[(0, 1)]);
    let problem = AlignProblem::new(loop_camera(), &[0, 1], &preds).unwrap();
    let sol = global_align(&problem, problem.initialize(), &AlignOptions::default()).unwrap();
    let rel = poses[0].inverse().compose(&poses[1]);
    assert!(sol.vars[1].pose.rotation_angle_to(&rel) < 1e-6);
    assert!((sol.vars[1].pose.translation - rel.translation).norm() < 1e-6);
    assert!(sol.vars[1].log_scale.abs() < 1e-6);
}

#[test]
fn energy_depends_only_on_relative_configuration() {
    let scene = room();
    let poses = loop_poses();
    let noisy = OracleBackend { scene: &scene, cam: loop_camera(), noise_sigma: 0.01, dropout: 0.1, seed: 5 };
    let preds: Vec<PairPrediction> = ring_pairs(6).iter().map(|&(i, k)| noisy.infer(i, &poses[i], k, &poses[k]).unwrap()).collect();
    let problem = AlignProblem::new(loop_camera(), &[0, 1, 2, 3, 4, 5], &preds).unwrap();
    let truth = gauge_truth(&poses);
    let e0 = problem.energy(&truth, ResidualNorm::Squared);
    assert!(e0 > 0.0);
    let g = Pose::new(so3_exp(&Vec3::new(0.4, -1.1, 0.7)), Vec3::new(2.0, -1.0, 0.5));
    let moved = |s: f64| -> Vec<ImageVars> {
        truth
            .iter()
            .map(|v| ImageVars {
                log_scale: v.log_scale - s.ln(),
                pose: Pose::new(g.rotation * v.pose.rotation, g.rotation * v.pose.translation * s + g.translation),
            })
            .collect()
    };
    assert!((problem.energy(&moved(1.0), ResidualNorm::Squared) - e0).abs() <= 1e-9 * e0);
    // A uniform scale multiplies every residual by s.
    let s = 1.7;
    assert!((problem.energy(&moved(s), ResidualNorm::Squared) - s * s * e0).abs() <= 1e-9 * e0);

    let clean = loop_predictions(&scene, &poses, &ring_pairs(6));
    let problem = AlignProblem::new(loop_camera(), &[0, 1, 2, 3, 4, 5], &clean).unwrap();
    assert!(problem.energy(&truth, ResidualNorm::Squared) < 1e-12);
    assert!(problem.energy(&moved(s), ResidualNorm::Squared) < 1e-12);
}

#[test]
fn noisy_loop_still_lands_near_truth() {
    let scene = room();
    let poses = loop_poses();
    let noisy = OracleBackend { scene: &scene, cam: loop_camera(), noise_sigma: 0.01, dropout: 0.1, seed: 9 };
    let preds: Vec<PairPrediction> = ring_pairs(6).iter().map(|&(i, k)| noisy.infer(i, &poses[i], k, &poses[k]).unwrap()).collect();
    let problem = AlignProblem::new(loop_camera(), &[0, 1, 2, 3, 4, 5], &preds).unwrap();
    let truth = gauge_truth(&poses);
    let sol = global_align(&problem, perturb(&truth, 5.0, 0.2, 1.2), &AlignOptions::default()).unwrap();
    assert!(sol.energies.windows(2).all(|w| w[1] <= w[0]));
    assert_recovered(&sol, &truth, 1e-2, 2e-2, 1e-2);
}

#[test]
fn disconnected_and_empty_graphs() {
    let scene = room();
    let poses = loop_poses();
    let preds = loop_predictions(&scene, &poses, &[(0, 1), (2, 3)]);
    match AlignProblem::new(loop_camera(), &[0, 1, 2, 3], &preds) {
        Err(AlignError::Disconnected(c)) => assert_eq!(c, vec![vec![0, 1], vec![2, 3]]),
        other => panic!("expected a disconnected error, got {other:?}"),
    }
    let mut preds = loop_predictions(&scene, &poses, &[(0, 1), (1, 2)]);
    preds.push(PairPrediction::all_invalid(2, 4, 64, 48));
    let p = AlignProblem::new(loop_camera(), &[0, 1, 2, 4, 5], &preds).unwrap();
    assert_eq!(p.images, vec![0, 1, 2]);
    assert_eq!(p.excluded, vec![4, 5]);
    let none = [PairPrediction::all_invalid(0, 1, 64, 48)];
    assert!(matches!(AlignProblem::new(loop_camera(), &[0, 1], &none), Err(AlignError::NoEdges)));
}

fn rgb_of(scene: &exploregs::simworld::VoxelScene, poses: &[Pose], ids: &[usize]) -> BTreeMap<usize, RgbImage> {
    ids.iter().map(|&i| (i, raycast_rgbd(scene, &poses[i], &loop_camera()).unwrap().0)).collect()
}

#[test]
fn merge_counts_and_duplicates() {
    let scene = room();
    let poses = loop_poses();
    let preds = loop_predictions(&scene, &poses, &[(0, 1)]);
    let problem = AlignProblem::new(loop_camera(), &[0, 1], &preds).unwrap();
    let truth = gauge_truth(&poses);
    let rgb = rgb_of(&scene, &poses, &[0, 1]);
    let cloud = merge_pointclouds(&problem, &truth[..2], &preds, &rgb, 0.0);
    assert_eq!(cloud.points.len(), preds[0].views[0].valid_count() + preds[0].views[1].valid_count());
    assert!(cloud.points.windows(2).all(|w| w[0].source < w[1].source));
    let c0 = rgb[&0].get(5, 7).map(|c| (c * 255.0).round() as u8);
    assert_eq!(cloud.points[7 * 64 + 5].rgb, c0);

    // Two co-located images collapse onto one image's voxels.
    let same = [poses[0], poses[0]];
    let o = OracleBackend { scene: &scene, cam: loop_camera(), noise_sigma: 0.0, dropout: 0.0, seed: 1 };
    let mut dup = o.infer(0, &same[0], 1, &same[1]).unwrap();
    let problem = AlignProblem::new(loop_camera(), &[0, 1], std::slice::from_ref(&dup)).unwrap();
    let id = [ImageVars::identity(), ImageVars::identity()];
    let rgb2: BTreeMap<usize, RgbImage> = [(0, rgb[&0].clone()), (1, rgb[&0].clone())].into();
    let both = merge_pointclouds(&problem, &id, std::slice::from_ref(&dup), &rgb2, 0.05);
    dup.views[1] = PairPrediction::all_invalid(0, 1, 64, 48).views[1].clone();
    let single = merge_pointclouds(&problem, &id, std::slice::from_ref(&dup), &rgb2, 0.05);
    assert_eq!(both.points.len(), single.points.len());
    assert!(single.points.len() < cloud.points.len() / 2, "downsampling merges nearby points");
}

#[test]
fn surface_distance_matches_brute_force() {
    let scene = room();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..300 {
        let p = Vec3::new(rng.random_range(0.3..5.7), rng.random_range(0.3..5.7), rng.random_range(0.3..5.7));
        let mut best = f64::INFINITY;
        for (idx, c) in scene.cells.iter().enumerate() {
            if let Cell::Solid(_) = c {
                let cc = scene.coords(idx);
                let lo = Vec3::new(cc[0] as f64, cc[1] as f64, cc[2] as f64) * scene.voxel_size;
                let hi = lo.add_scalar(scene.voxel_size);
                let d = Vec3::from_fn(|a, _| (lo[a] - p[a]).max(p[a] - hi[a]).max(0.0));
                best = best.min(d.norm());
            }
        }
        let got = scene.surface_distance(&p);
        if best <= 2.0 * scene.voxel_size {
            assert!((got - best).abs() < 1e-12);
        } else {
            assert!(got >= best);
        }
    }
}

#[test]
fn merged_room_cloud_lies_on_the_surface() {
    let scene = room();
    let poses = loop_poses();
    let preds = loop_predictions(&scene, &poses, &ring_pairs(6));
    let problem = AlignProblem::new(loop_camera(), &[0, 1, 2, 3, 4, 5], &preds).unwrap();
    let sol = global_align(&problem, problem.initialize(), &AlignOptions::default()).unwrap();
    let rgb = rgb_of(&scene, &poses, &[0, 1, 2, 3, 4, 5]);
    let cloud = merge_pointclouds(&problem, &sol.vars, &preds, &rgb, 0.05);
    assert!(cloud.points.len() > 1000);
    let near = cloud.points.iter().filter(|p| scene.surface_distance(&poses[0].transform_point(&p.xyz)) <= scene.voxel_size).count();
    assert!(near as f64 >= 0.95 * cloud.points.len() as f64, "{near} of {}", cloud.points.len());
}
