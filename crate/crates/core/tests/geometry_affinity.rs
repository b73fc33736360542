mod common;

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;
use mvm::affinity::{
    build_affinity_matrix, distance_to_similarity, geometric_distance, pairwise_affinity, AffinityMode,
    AffinityParams, AppearanceDescriptor, DetectionKey, ViewPair,
};
use mvm::geometry::{
    epipolar_line, fundamental_matrix, project, ransac_triangulate, triangulate_dlt, CameraView, Observation,
    RansacParams,
};

fn target() -> Vector3<f64> {
    Vector3::new(0.0, 1.0, 0.0)
}

/// `[e_v]× P_v P_u⁺`, built from the projection matrices alone.
fn fundamental_from_projections(cam_u: &CameraView, cam_v: &CameraView) -> Matrix3<f64> {
    let pu = cam_u.projection_matrix();
    let pv = cam_v.projection_matrix();
    let pu_pinv = pu.transpose() * (pu * pu.transpose()).try_inverse().unwrap();
    let e = pv * cam_u.center().push(1.0);
    e.cross_matrix() * pv * pu_pinv
}

fn point_line_distance(l: &Vector3<f64>, p: &Vector2<f64>) -> f64 {
    (l.x * p.x + l.y * p.y + l.z).abs() / l.xy().norm()
}

#[test]
fn ten_views_beat_the_best_two_view_subset() {
    let cams = arc_cameras(10, 30.0, 5.0, target(), 0);
    let pairs: Vec<(usize, usize)> = (0..10).flat_map(|i| (i + 1..10).map(move |j| (i, j))).collect();
    let mut full = 0.0;
    let mut per_pair = vec![0.0; pairs.len()];
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = target() + Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let noise = gaussian_offsets(&mut rng, cams.len(), 2.0);
        let obs: Vec<Observation> = cams
            .iter()
            .zip(&noise)
            .map(|(c, n)| Observation::new(c, project(&x, c).unwrap() + n, 1.0))
            .collect();
        full += (triangulate_dlt(&obs, 0.0).unwrap().position - x).norm();
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let two = [obs[i], obs[j]];
            per_pair[k] += (triangulate_dlt(&two, 0.0).unwrap().position - x).norm();
        }
    }
    let best_pair = per_pair.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(full < best_pair, "10 views {} vs best pair {}", full / 100.0, best_pair / 100.0);
}

#[test]
fn perpendicular_shift_matches_hand_evaluated_distance() {
    let cams = arc_cameras(2, 30.0, 5.0, target(), 0);
    let joints = person(Vector3::zeros(), 0.4);
    let f = fundamental_from_projections(&cams[0], &cams[1]);
    let delta = 5.0;
    let offsets: Vec<Vector2<f64>> = joints
        .iter()
        .map(|x| {
            let l = f * project(x, &cams[0]).unwrap().push(1.0);
            delta * l.xy().normalize()
        })
        .collect();
    let pose_u = detect(&cams[0], 0, &joints, None);
    let pose_v = detect(&cams[1], 0, &joints, Some(&offsets));

    let mut expected = 0.0;
    for c in 0..joints.len() {
        let x_u = pose_u.pixel(c, &cams[0]);
        let x_v = pose_v.pixel(c, &cams[1]);
        let forward = point_line_distance(&(f * x_u.push(1.0)), &x_v);
        assert!((forward - delta).abs() < 1e-9);
        expected += forward + point_line_distance(&(f.transpose() * x_v.push(1.0)), &x_u);
    }
    expected /= 2.0 * joints.len() as f64;

    let views = ViewPair::new(&cams[0], &cams[1]).unwrap();
    let d = geometric_distance(&pose_u, &pose_v, &views, 4).unwrap();
    assert!((d - expected).abs() < 1e-9, "{d} vs {expected}");
}

/// Cameras 5 m from the pair; the distance shrinks roughly inversely with range.
#[test]
fn people_two_meters_apart_are_far_in_epipolar_distance() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mid = Vector3::new(rng.random_range(-0.5..0.5), 0.0, rng.random_range(-0.5..0.5));
        let phi: f64 = rng.random_range(-1.0..1.0);
        let half = Vector3::new(phi.sin(), 0.0, phi.cos());
        let a = person(mid - half, rng.random_range(0.0..std::f64::consts::TAU));
        let b = person(mid + half, rng.random_range(0.0..std::f64::consts::TAU));
        let cams = arc_cameras(2, 30.0, 5.0, mid + Vector3::y(), 0);
        let views = ViewPair::new(&cams[0], &cams[1]).unwrap();
        let d = geometric_distance(&detect(&cams[0], 0, &a, None), &detect(&cams[1], 0, &b, None), &views, 4).unwrap();
        assert!(d > 20.0, "seed {seed}: D = {d}");
    }
}

#[test]
fn identical_people_prefer_their_own_counterpart() {
    let cams = arc_cameras(2, 30.0, 7.0, target(), 0);
    let people = [person(Vector3::new(-0.5, 0.0, -0.7), 0.0), person(Vector3::new(0.5, 0.0, 0.7), 0.0)];
    let mut poses = Vec::new();
    let mut descriptors = BTreeMap::new();
    let descriptor = AppearanceDescriptor::new(vec![0.6, 0.8]).unwrap();
    for cam in &cams {
        for (i, p) in people.iter().enumerate() {
            let pose = detect(cam, i as u32, p, None);
            descriptors.insert(pose.key(), descriptor.clone());
            poses.push(pose);
        }
    }
    let a = build_affinity_matrix(&poses, &cams, Some(&descriptors), &AffinityParams::default()).unwrap();
    let at = |f0: u32, p0: u32, f1: u32, p1: u32| a.between(&DetectionKey::new(f0, p0), &DetectionKey::new(f1, p1)).unwrap();
    for same in [at(0, 0, 1, 0), at(0, 1, 1, 1)] {
        for cross in [at(0, 0, 1, 1), at(0, 1, 1, 0)] {
            assert!(same > cross, "{same} vs {cross}");
        }
    }
}

/// Two-person scene seen by four cameras, with pixel noise.
fn noisy_scene(seed: u64, sigma: f64) -> (Vec<CameraView>, Vec<mvm::affinity::Pose2D>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cams = arc_cameras(4, 40.0, 7.0, target(), 0);
    let people = [
        person(Vector3::new(-0.8, 0.0, rng.random_range(-1.0..1.0)), rng.random_range(0.0..6.0)),
        person(Vector3::new(0.8, 0.0, rng.random_range(-1.0..1.0)), rng.random_range(0.0..6.0)),
    ];
    let mut poses = Vec::new();
    for cam in &cams {
        for (i, p) in people.iter().enumerate() {
            let noise = gaussian_offsets(&mut rng, p.len(), sigma);
            poses.push(detect(cam, i as u32, p, Some(&noise)));
        }
    }
    (cams, poses)
}

fn scaled(cam: &CameraView, s: f64) -> CameraView {
    let [fx, fy] = cam.focal();
    let [cx, cy] = cam.principal_point();
    let [w, h] = cam.image_size();
    CameraView::new(
        cam.frame_id(),
        [s * fx, s * fy],
        [s * cx, s * cy],
        [(s * w as f64) as u32, (s * h as f64) as u32],
        *cam.rotation(),
        *cam.translation(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn affinity_is_bounded_and_monotone(
        gamma in 1e-3f64..5.0,
        d1 in 0.0f64..200.0,
        dd in 0.0f64..200.0,
        s1 in 0.0f64..1.0,
        ds in 0.0f64..1.0,
    ) {
        let s2 = (s1 + ds).min(1.0);
        let d2 = d1 + dd;
        for (s, d) in [(s1, d1), (s2, d2), (s1, d2), (s2, d1)] {
            let a = s * distance_to_similarity(gamma, d);
            prop_assert!((0.0..=1.0).contains(&a));
        }
        prop_assert!(distance_to_similarity(gamma, d2) <= distance_to_similarity(gamma, d1));
        prop_assert!(s2 * distance_to_similarity(gamma, d1) >= s1 * distance_to_similarity(gamma, d1));
    }

    #[test]
    fn pairwise_affinity_stays_in_the_unit_interval(seed in 0u64..1000, sigma in 0.0f64..20.0) {
        let (cams, poses) = noisy_scene(seed, sigma);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let desc = |rng: &mut ChaCha8Rng| AppearanceDescriptor::new((0..8).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let views = ViewPair::new(&cams[0], &cams[2]).unwrap();
        let (du, dv) = (desc(&mut rng), desc(&mut rng));
        for mode in [AffinityMode::Combined, AffinityMode::Geometric, AffinityMode::Appearance] {
            let params = AffinityParams { mode, ..AffinityParams::default() };
            let a = pairwise_affinity(&poses[0], &poses[5], Some(&du), Some(&dv), &views, &params).unwrap();
            prop_assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn geometric_distance_is_symmetric(seed in 0u64..1000, sigma in 0.0f64..10.0, u in 0usize..8, v in 0usize..8) {
        let (cams, poses) = noisy_scene(seed, sigma);
        let (pu, pv) = (&poses[u], &poses[v]);
        prop_assume!(pu.frame_id() != pv.frame_id());
        let (cu, cv) = (&cams[pu.frame_id() as usize], &cams[pv.frame_id() as usize]);
        let d_uv = geometric_distance(pu, pv, &ViewPair::new(cu, cv).unwrap(), 4).unwrap();
        let d_vu = geometric_distance(pv, pu, &ViewPair::new(cv, cu).unwrap(), 4).unwrap();
        prop_assert!((d_uv - d_vu).abs() < 1e-9);
    }

    #[test]
    fn image_scaling_is_absorbed_by_gamma(seed in 0u64..1000, s_index in 0usize..4) {
        let s = [0.5, 1.5, 2.0, 3.0][s_index];
        let (cams, poses) = noisy_scene(seed, 3.0);
        let big: Vec<CameraView> = cams.iter().map(|c| scaled(c, s)).collect();
        let params = AffinityParams { mode: AffinityMode::Geometric, ..AffinityParams::default() };
        let a = build_affinity_matrix(&poses, &cams, None, &params).unwrap();
        let b = build_affinity_matrix(&poses, &big, None, &AffinityParams { gamma: params.gamma / s, ..params }).unwrap();
        prop_assert!((a.entries() - b.entries()).amax() < 1e-9);

        let views = ViewPair::new(&cams[0], &cams[1]).unwrap();
        let big_views = ViewPair::new(&big[0], &big[1]).unwrap();
        let d = geometric_distance(&poses[0], &poses[2], &views, 4).unwrap();
        let d_big = geometric_distance(&poses[0], &poses[2], &big_views, 4).unwrap();
        prop_assert!((d_big - s * d).abs() < 1e-9 * (1.0 + d_big));
    }

    #[test]
    fn equal_descriptors_reduce_to_geometry(seed in 0u64..1000) {
        let (cams, poses) = noisy_scene(seed, 2.0);
        let d = AppearanceDescriptor::new(vec![1.0, 0.0, 0.0]).unwrap();
        let descriptors: BTreeMap<_, _> = poses.iter().map(|p| (p.key(), d.clone())).collect();
        let geo = AffinityParams { mode: AffinityMode::Geometric, ..AffinityParams::default() };
        let without = build_affinity_matrix(&poses, &cams, None, &geo).unwrap();
        let with = build_affinity_matrix(&poses, &cams, Some(&descriptors), &geo).unwrap();
        let combined = build_affinity_matrix(&poses, &cams, Some(&descriptors), &AffinityParams::default()).unwrap();
        prop_assert_eq!(without.entries(), with.entries());
        prop_assert_eq!(without.entries(), combined.entries());
    }

    #[test]
    fn epipolar_constraint_holds_for_random_points(
        seed in 0u64..1000,
        arc in 5.0f64..90.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cams = arc_cameras(2, arc, rng.random_range(3.0..10.0), target(), 0);
        let f = fundamental_matrix(&cams[0], &cams[1]).unwrap();
        let f = f / f.norm();
        for _ in 0..20 {
            let x = target() + Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (pu, pv) = (project(&x, &cams[0]).unwrap(), project(&x, &cams[1]).unwrap());
            prop_assert!((pv.push(1.0).transpose() * f * pu.push(1.0))[0].abs() < 1e-6);
            prop_assert!(epipolar_line(&f, &pu).unwrap().distance(&pv) < 1e-6);
        }
    }

    #[test]
    fn triangulation_round_trips_and_ignores_rigid_motion(
        seed in 0u64..1000,
        views in 2usize..8,
        yaw in -3.0f64..3.0,
        shift in prop::array::uniform3(-5.0f64..5.0),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cams = arc_cameras(views, 40.0, 6.0, target(), 0);
        let x = target() + Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
        let obs: Vec<Observation> = cams.iter().map(|c| Observation::new(c, project(&x, c).unwrap(), 1.0)).collect();
        let p = triangulate_dlt(&obs, 0.0).unwrap();
        for o in &obs {
            prop_assert!((project(&p.position, o.camera).unwrap() - o.pixel).norm() < 1e-6);
        }

        let r = nalgebra::Rotation3::from_axis_angle(&Vector3::y_axis(), yaw).into_inner();
        let t = Vector3::from(shift);
        let moved: Vec<CameraView> = cams
            .iter()
            .map(|c| {
                let rot = c.rotation() * r.transpose();
                CameraView::new(c.frame_id(), c.focal(), c.principal_point(), c.image_size(), rot, c.translation() - rot * t).unwrap()
            })
            .collect();
        let obs2: Vec<Observation> = moved.iter().zip(&obs).map(|(c, o)| Observation::new(c, o.pixel, 1.0)).collect();
        let q = triangulate_dlt(&obs2, 0.0).unwrap();
        let expected = r * p.position + t;
        prop_assert!((q.position - expected).norm() <= 1e-6 * expected.norm());
    }

    #[test]
    fn ransac_is_bit_reproducible(seed in 0u64..1000, views in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cams = arc_cameras(views, 40.0, 6.0, target(), 0);
        let x = target() + Vector3::new(rng.random_range(-0.5..0.5), 0.0, rng.random_range(-0.5..0.5));
        let noise = gaussian_offsets(&mut rng, views, 5.0);
        let obs: Vec<Observation> = cams.iter().zip(&noise).map(|(c, n)| Observation::new(c, project(&x, c).unwrap() + n * 3.0, 1.0)).collect();
        let params = RansacParams { iterations: 20, seed, ..RansacParams::default() };
        let a = ransac_triangulate(&obs, &params);
        let b = ransac_triangulate(&obs, &params);
        match (a, b) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.position.map(f64::to_bits), b.position.map(f64::to_bits));
                prop_assert_eq!(a.inlier_views, b.inlier_views);
            }
            (a, b) => prop_assert_eq!(a.err(), b.err()),
        }
    }
}
