use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::costvol::Match;

struct Rig {
    k: Matrix3<f64>,
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl Rig {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        let f = rng.gen_range(300.0..900.0);
        let k = Matrix3::new(f, 0.0, rng.gen_range(200.0..400.0), 0.0, f, rng.gen_range(100.0..200.0), 0.0, 0.0, 1.0);
        let axis = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let r = Rotation3::from_scaled_axis(axis * 0.05).into_inner();
        let t = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-0.3..0.3), rng.gen_range(-1.0..1.0));
        Self { k, r, t }
    }

    /// `F = K^-T [t]x R K^-1` for `X2 = R X1 + t`.
    fn fundamental(&self) -> Matrix3<f64> {
        let ki = self.k.try_inverse().unwrap();
        ki.transpose() * skew(self.t) * self.r * ki
    }

    fn project(&self, x: Vector3<f64>) -> [f64; 2] {
        let p = self.k * x;
        [p.x / p.z, p.y / p.z]
    }

    fn matches(&self, rng: &mut ChaCha8Rng, n: usize) -> Vec<Match> {
        (0..n)
            .map(|_| {
                let x = Vector3::new(rng.gen_range(-8.0..8.0), rng.gen_range(-4.0..4.0), rng.gen_range(6.0..40.0));
                Match::new(self.project(x), self.project(self.r * x + self.t), 1.0)
            })
            .collect()
    }
}

fn same_up_to_sign(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let (a, b) = (a / a.norm(), b / b.norm());
    (a - b).amax().min((a + b).amax())
}

#[test]
fn skew_translation_line_and_epipole() {
    let f = FundamentalMatrix::from_matrix(skew(Vector3::new(1.0, 0.0, 0.0))).unwrap();
    let l = epipolar_line(&f, [5.0, 3.0]).unwrap();
    // y' = 3
    assert!(l.x.abs() < 1e-12);
    assert!((l.z / l.y + 3.0).abs() < 1e-12);
    assert_eq!(epipole_of(&f), Epipole::Infinite([1.0, 0.0]));
    assert!((f.matrix().transpose() * Vector3::new(1.0, 0.0, 0.0)).norm() < 1e-12);
}

#[test]
fn pure_x_translation_gives_forced_form() {
    let rig = Rig { k: Matrix3::identity(), r: Matrix3::identity(), t: Vector3::new(1.0, 0.0, 0.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let f = eight_point(&rig.matches(&mut rng, 20)).unwrap();
    let expect = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    assert!(same_up_to_sign(f.matrix(), &expect) < 1e-9);
}

#[test]
fn eight_noiseless_points_recover_ground_truth() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rig = Rig::random(&mut rng);
        let m = rig.matches(&mut rng, 8);
        let f = eight_point(&m).unwrap();
        assert!(same_up_to_sign(f.matrix(), &rig.fundamental()) < 1e-6, "seed {seed}");
        let held_out = rig.matches(&mut rng, 50);
        for x in &held_out {
            assert!(f.line_distance(x.p, x.q) < 1e-6);
        }
    }
}

#[test]
fn noiseless_residuals_vanish() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rig = Rig::random(&mut rng);
    let f = FundamentalMatrix::from_matrix(rig.fundamental()).unwrap();
    for m in rig.matches(&mut rng, 100) {
        assert!(f.residual(m.p, m.q).abs() < 1e-9);
        assert!(f.line_distance(m.p, m.q) < 1e-9);
    }
}

#[test]
fn too_few_or_degenerate_matches_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rig = Rig::random(&mut rng);
    assert!(eight_point(&rig.matches(&mut rng, 7)).is_err());
    let collinear: Vec<Match> = (0..10).map(|i| Match::new([i as f64, 2.0 * i as f64], [i as f64 + 1.0, 2.0 * i as f64], 1.0)).collect();
    assert!(eight_point(&collinear).is_err());
    assert!(ransac_f(&rig.matches(&mut rng, 7), &RansacConfig::default()).is_err());
}

#[test]
fn fundamental_invariants_hold() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rig = Rig::random(&mut rng);
    let f = eight_point(&rig.matches(&mut rng, 30)).unwrap();
    let m = f.matrix();
    assert!((m.norm() - 1.0).abs() < 1e-12);
    assert!(m.determinant().abs() < 1e-12);
    let o = epipole_of(&f).homogeneous();
    assert!((m.transpose() * o).norm() < 1e-9 * o.norm());
}

#[test]
fn forward_motion_epipole_is_principal_point() {
    let k = Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 180.0, 0.0, 0.0, 1.0);
    let rig = Rig { k, r: Matrix3::identity(), t: Vector3::new(0.0, 0.0, -1.0) };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = eight_point(&rig.matches(&mut rng, 40)).unwrap();
    match epipole_of(&f) {
        Epipole::Finite([x, y]) => assert!((x - 320.0).abs() < 1e-6 && (y - 180.0).abs() < 1e-6),
        e => panic!("unexpected epipole {e:?}"),
    }
}

#[test]
fn ransac_recovers_all_noiseless_inliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let rig = Rig::random(&mut rng);
    let m = rig.matches(&mut rng, 100);
    let res = ransac_f(&m, &RansacConfig { iterations: 50, ..Default::default() }).unwrap();
    assert_eq!(res.inliers.len(), 100);
    let single = ransac_f(&m, &RansacConfig { iterations: 1, ..Default::default() }).unwrap();
    assert_eq!(single.inliers.len(), 100);
}

fn contaminated(seed: u64) -> (Vec<Match>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rig = Rig::random(&mut rng);
    let mut m = rig.matches(&mut rng, 70);
    for _ in 0..30 {
        m.push(Match::new([rng.gen_range(0.0..640.0), rng.gen_range(0.0..360.0)], [rng.gen_range(0.0..640.0), rng.gen_range(0.0..360.0)], 1.0));
    }
    (m, 70)
}

#[test]
fn ransac_tolerates_outliers_and_selects_minimum_median() {
    let (m, n_true) = contaminated(7);
    let cfg = RansacConfig { iterations: 2000, inlier_threshold: 1.0, seed: 11 };
    let res = ransac_f(&m, &cfg).unwrap();
    let recovered = res.inliers.iter().filter(|&&i| i < n_true).count();
    assert!(recovered as f64 >= 0.95 * n_true as f64);
    let chosen = res.hypothesis_medians[res.selected].unwrap();
    assert!(res.hypothesis_medians.iter().flatten().all(|v| chosen <= *v));
    assert!(res.hypothesis_medians[..res.selected].iter().flatten().all(|v| chosen < *v));
    for &i in &res.inliers {
        assert!(res.f.line_distance(m[i].p, m[i].q) < cfg.inlier_threshold);
    }
}

#[test]
fn ransac_is_reproducible_across_thread_counts() {
    let (m, _) = contaminated(8);
    let cfg = RansacConfig { iterations: 300, inlier_threshold: 1.0, seed: 3 };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| ransac_f(&m, &cfg).unwrap())
    };
    let (a, b) = (run(1), run(3));
    assert_eq!(a.f, b.f);
    assert_eq!(a.inliers, b.inliers);
}

#[test]
fn translation_only_matches_give_zero_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut rig = Rig::random(&mut rng);
    rig.r = Matrix3::identity();
    let m = rig.matches(&mut rng, 40);
    let f = FundamentalMatrix::from_matrix(rig.fundamental()).unwrap();
    let (model, rms) = fit_rotational_flow(&m, &f).unwrap();
    assert!(model.coeffs.iter().all(|a| a.abs() < 1e-9), "{:?}", model.coeffs);
    assert!(rms < 1e-9);
}

#[test]
fn small_roll_is_recovered_as_linearized_rotation() {
    let (cx, cy) = (320.0, 180.0);
    let k = Matrix3::new(500.0, 0.0, cx, 0.0, 500.0, cy, 0.0, 0.0, 1.0);
    // the affine fit is exact up to the O(theta^2) radial term
    let theta = 0.001;
    let r = Rotation3::from_axis_angle(&Vector3::z_axis(), theta).into_inner();
    let rig = Rig { k, r, t: Vector3::new(0.0, 0.0, -0.5) };
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = rig.matches(&mut rng, 200);
    let f = FundamentalMatrix::from_matrix(rig.fundamental()).unwrap();
    let (model, _) = fit_rotational_flow(&m, &f).unwrap();
    for y in (0..360).step_by(20) {
        for x in (0..640).step_by(20) {
            let (x, y) = (x as f64, y as f64);
            let expect = [-theta * (y - cy), theta * (x - cx)];
            let got = model.eval([x, y]);
            assert!((got[0] - expect[0]).abs() < 1e-3 && (got[1] - expect[1]).abs() < 1e-3, "at ({x},{y}): {got:?} vs {expect:?}");
        }
    }
}

#[test]
fn rotational_fit_needs_six_matches() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rig = Rig::random(&mut rng);
    let f = FundamentalMatrix::from_matrix(rig.fundamental()).unwrap();
    assert!(fit_rotational_flow(&rig.matches(&mut rng, 5), &f).is_err());
}

#[test]
fn disparity_examples() {
    let origin = Epipole::Finite([0.0, 0.0]);
    assert_eq!(epipolar_disparity([10.0, 0.0], [13.0, 0.0], &origin).unwrap(), 3.0);
    assert_eq!(epipolar_disparity([10.0, 0.0], [10.0, 0.0], &origin).unwrap(), 0.0);
    let inf = Epipole::Infinite([1.0, 0.0]);
    assert_eq!(epipolar_disparity([10.0, 5.0], [7.0, 5.0], &inf).unwrap(), -3.0);
    assert!(epipolar_disparity([0.0, 0.0], [1.0, 0.0], &origin).is_err());
}

#[test]
fn exact_correspondences_reconstruct_through_the_frame() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut rig = Rig::random(&mut rng);
    rig.r = Matrix3::identity();
    let f = FundamentalMatrix::from_matrix(rig.fundamental()).unwrap();
    let frame = EpipolarFrame::new(f, RotationalFlowModel::default());
    for m in rig.matches(&mut rng, 30) {
        let (rect, _) = frame.rectify(m.p).unwrap();
        let d = epipolar_disparity(rect, m.q, &frame.epipole).unwrap();
        let q = frame.point_at(m.p, d).unwrap();
        assert!((q[0] - m.q[0]).abs() < 1e-6 && (q[1] - m.q[1]).abs() < 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn eight_point_is_equivariant_to_uniform_scaling(seed in 0u64..10_000, s in 0.1f64..10.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rig = Rig::random(&mut rng);
        let m = rig.matches(&mut rng, 12);
        let scaled: Vec<Match> = m.iter().map(|x| Match::new([x.p[0] * s, x.p[1] * s], [x.q[0] * s, x.q[1] * s], 1.0)).collect();
        let f = eight_point(&m).unwrap();
        let fs = eight_point(&scaled).unwrap();
        let si = Matrix3::new(1.0 / s, 0.0, 0.0, 0.0, 1.0 / s, 0.0, 0.0, 0.0, 1.0);
        let expect = FundamentalMatrix::from_matrix(si * f.matrix() * si).unwrap();
        prop_assert!((fs.matrix() - expect.matrix()).amax() < 1e-7);
    }

    #[test]
    fn disparity_of_coincident_points_is_zero(x in -500.0f64..500.0, y in -500.0f64..500.0, ox in -50.0f64..50.0) {
        prop_assume!((x - ox).hypot(y) > 1e-3);
        let e = Epipole::Finite([ox, 0.0]);
        prop_assert_eq!(epipolar_disparity([x, y], [x, y], &e).unwrap(), 0.0);
    }

    #[test]
    fn estimates_are_rank_two_unit_norm(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rig = Rig::random(&mut rng);
        let mut m = rig.matches(&mut rng, 20);
        for x in &mut m {
            x.q[0] += rng.gen_range(-0.5..0.5);
        }
        let f = eight_point(&m).unwrap();
        prop_assert!((f.matrix().norm() - 1.0).abs() < 1e-12);
        let s = f.matrix().singular_values();
        prop_assert!(s.min() < 1e-12);
    }
}
