//! Synthetic stand-in for the renderer and the learned matcher: point-cloud
//! scenes, keypoint observation at arbitrary poses, correspondence synthesis
//! with configurable noise and outliers, and pose perturbation sampling.
//!
//! All randomness flows from explicit seeds; nothing reads ambient entropy.
//! Sampling is done in `f64` and converted, so the draw sequence is identical
//! for every scalar type.

use nalgebra::Vector3;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use thiserror::Error;

use crate::camera::{project, Intrinsics, PixelPoint};
use crate::lie::{so3_exp, Pose};
use crate::matching::{CorrespondenceSet, MatchFailure, Matcher, MatchRecord, ViewId};
use crate::scalar::{cast, to_f64, Scalar};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("a scene needs at least 8 points, got {0}")]
    TooFewPoints(usize),
    #[error("degenerate extent box: min {min:?} must be strictly below max {max:?} per axis")]
    EmptyExtent { min: [f64; 3], max: [f64; 3] },
}

/// Axis-aligned box the scene points are drawn from, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtentBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl ExtentBox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self, SynthError> {
        if (0..3).any(|i| min[i] >= max[i]) {
            return Err(SynthError::EmptyExtent { min, max });
        }
        Ok(ExtentBox { min, max })
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// A static point cloud standing in for a trained scene representation.
#[derive(Debug, Clone)]
pub struct SyntheticScene<S: Scalar> {
    /// Scene points with stable ids (the vector index is the id).
    pub points: Vec<Vector3<S>>,
    pub intrinsics: Intrinsics<S>,
    pub seed: u64,
}

/// Pixel noise, dropout, and outlier injection applied to synthetic matches.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec<S: Scalar> {
    /// Isotropic Gaussian pixel noise added to both sides of each match.
    pub pixel_sigma: S,
    /// Probability that a match's view point is replaced by a uniform
    /// in-bounds pixel.
    pub outlier_rate: S,
    /// Probability that a shared point produces no match at all.
    pub dropout_rate: S,
    pub seed: u64,
}

impl<S: Scalar> NoiseSpec<S> {
    /// No noise, no dropout, no outliers.
    pub fn clean(seed: u64) -> Self {
        NoiseSpec {
            pixel_sigma: S::zero(),
            outlier_rate: S::zero(),
            dropout_rate: S::zero(),
            seed,
        }
    }
}

/// Gaussian pose perturbations used to generate candidate views.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbationSpec<S: Scalar> {
    /// Per-axis translation standard deviation, meters.
    pub sigma_t: S,
    /// Standard deviation of the rotation angle magnitude, degrees.
    pub sigma_r_deg: S,
    /// Number of candidate poses to draw.
    pub count: usize,
    pub seed: u64,
}

/// Scene points drawn uniformly from `extent`; deterministic under `seed`.
pub fn generate_scene<S: Scalar>(
    n_points: usize,
    extent: &ExtentBox,
    intrinsics: Intrinsics<S>,
    seed: u64,
) -> Result<SyntheticScene<S>, SynthError> {
    if n_points < 8 {
        return Err(SynthError::TooFewPoints(n_points));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..n_points)
        .map(|_| {
            Vector3::new(
                cast(rng.random_range(extent.min[0]..extent.max[0])),
                cast(rng.random_range(extent.min[1]..extent.max[1])),
                cast(rng.random_range(extent.min[2]..extent.max[2])),
            )
        })
        .collect();
    Ok(SyntheticScene {
        points,
        intrinsics,
        seed,
    })
}

/// Projects every scene point, keeping those in front of the camera and
/// inside the image bounds. Plays the role of rendering a view.
pub fn observe<S: Scalar>(
    scene: &SyntheticScene<S>,
    pose: &Pose<S>,
) -> Vec<(usize, PixelPoint<S>)> {
    scene
        .points
        .iter()
        .enumerate()
        .filter_map(|(id, point)| {
            project(&scene.intrinsics, pose, point)
                .filter(|px| scene.intrinsics.contains(px))
                .map(|px| (id, px))
        })
        .collect()
}

/// Matches produced by [`synth_match`] with the ground-truth outlier labels
/// kept in a side channel for test oracles. The labels are never visible to
/// the pipeline under test.
#[derive(Debug, Clone)]
pub struct LabeledMatches<S: Scalar> {
    pub set: CorrespondenceSet<S>,
    /// Indices into `set.records()` that were replaced by outliers.
    pub outlier_indices: Vec<usize>,
}

/// Synthesizes correspondences between two poses of one scene: intersects
/// the visible point sets by id, adds isotropic pixel noise to both sides,
/// drops matches with `dropout_rate`, and replaces each surviving view point
/// with a uniform in-bounds pixel with probability `outlier_rate`.
///
/// Inliers carry the nominal confidence 1; outliers record a uniform draw in
/// `[0, 1]`. Deterministic in `(noise.seed, query_pose, view_pose)`.
pub fn synth_match<S: Scalar>(
    scene: &SyntheticScene<S>,
    query_pose: &Pose<S>,
    view_pose: &Pose<S>,
    noise: &NoiseSpec<S>,
) -> LabeledMatches<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(crate::seed::mix(
        noise.seed,
        pose_bits(query_pose),
        pose_bits(view_pose),
    ));
    let pixel_sigma = to_f64(noise.pixel_sigma);
    let normal = Normal::new(0.0_f64, pixel_sigma.max(f64::MIN_POSITIVE)).unwrap();
    let dropout = to_f64(noise.dropout_rate);
    let outlier = to_f64(noise.outlier_rate);
    let width = to_f64(S::from_u32(scene.intrinsics.width).unwrap());
    let height = to_f64(S::from_u32(scene.intrinsics.height).unwrap());

    let query_obs = observe(scene, query_pose);
    let view_obs: std::collections::HashMap<usize, PixelPoint<S>> =
        observe(scene, view_pose).into_iter().collect();

    let mut records = Vec::new();
    let mut outlier_indices = Vec::new();
    for (id, q_px) in query_obs {
        let Some(v_px) = view_obs.get(&id) else {
            continue;
        };
        let mut noisy = |px: &PixelPoint<S>| {
            if pixel_sigma > 0.0 {
                PixelPoint::new(
                    px.u + cast(normal.sample(&mut rng)),
                    px.v + cast(normal.sample(&mut rng)),
                )
            } else {
                *px
            }
        };
        let query_point = noisy(&q_px);
        let view_point = noisy(v_px);
        if rng.random_range(0.0..1.0) < dropout {
            continue;
        }
        if rng.random_range(0.0..1.0) < outlier {
            let view_point = PixelPoint::new(
                cast(rng.random_range(0.0..width)),
                cast(rng.random_range(0.0..height)),
            );
            let confidence = cast(rng.random_range(0.0..1.0));
            outlier_indices.push(records.len());
            records.push(MatchRecord {
                query_point,
                view_point,
                confidence,
            });
        } else {
            records.push(MatchRecord {
                query_point,
                view_point,
                confidence: S::one(),
            });
        }
    }
    LabeledMatches {
        set: CorrespondenceSet::new(ViewId::Reference, records),
        outlier_indices,
    }
}

/// Draws `spec.count` poses around `base`: per-axis Gaussian translation
/// noise, and a rotation by `|N(0, sigma_r)|` degrees about a uniformly
/// random axis, composed on the left of the base rotation.
pub fn sample_perturbations<S: Scalar>(base: &Pose<S>, spec: &PerturbationSpec<S>) -> Vec<Pose<S>> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let sigma_t = to_f64(spec.sigma_t);
    let sigma_r = to_f64(spec.sigma_r_deg).to_radians();
    let normal_t = Normal::new(0.0_f64, sigma_t.max(f64::MIN_POSITIVE)).unwrap();
    let normal_r = Normal::new(0.0_f64, sigma_r.max(f64::MIN_POSITIVE)).unwrap();
    (0..spec.count)
        .map(|_| {
            let delta_t: Vector3<S> = if sigma_t > 0.0 {
                Vector3::new(
                    cast(normal_t.sample(&mut rng)),
                    cast(normal_t.sample(&mut rng)),
                    cast(normal_t.sample(&mut rng)),
                )
            } else {
                Vector3::zeros()
            };
            let delta_r = if sigma_r > 0.0 {
                let angle: f64 = normal_r.sample(&mut rng).abs();
                let axis = random_unit_axis(&mut rng);
                so3_exp(&(axis * cast::<S>(angle)))
            } else {
                crate::lie::Rotation::identity()
            };
            Pose {
                rotation: delta_r * base.rotation,
                translation: base.translation + delta_t,
            }
        })
        .collect()
}

fn random_unit_axis<S: Scalar>(rng: &mut ChaCha8Rng) -> Vector3<S> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0_f64..1.0),
            rng.random_range(-1.0_f64..1.0),
            rng.random_range(-1.0_f64..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return Vector3::new(cast(v[0] / n), cast(v[1] / n), cast(v[2] / n));
        }
    }
}

/// Folds the pose entries into a seed so distinct render poses get distinct,
/// reproducible noise streams.
fn pose_bits<S: Scalar>(pose: &Pose<S>) -> u64 {
    let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
    let mut fold = |x: S| {
        acc ^= to_f64(x).to_bits();
        acc = acc.wrapping_mul(0x0000_0100_0000_01B3);
    };
    for i in 0..3 {
        for j in 0..3 {
            fold(pose.rotation.matrix()[(i, j)]);
        }
    }
    for i in 0..3 {
        fold(pose.translation[i]);
    }
    acc
}

/// A rendered synthetic view: the pose it was rendered at plus the visible
/// keypoints. This is what crosses the provider/matcher boundary.
#[derive(Debug, Clone)]
pub struct SyntheticView<S: Scalar> {
    pub pose: Pose<S>,
    pub observations: Vec<(usize, PixelPoint<S>)>,
}

/// View provider plus matcher backed by one synthetic scene.
///
/// Matching intersects the two views' id sets and applies the configured
/// noise; ground-truth outlier labels are discarded at this boundary.
#[derive(Debug, Clone)]
pub struct SyntheticBackend<S: Scalar> {
    pub scene: SyntheticScene<S>,
    pub noise: NoiseSpec<S>,
}

impl<S: Scalar> SyntheticBackend<S> {
    pub fn new(scene: SyntheticScene<S>, noise: NoiseSpec<S>) -> Self {
        SyntheticBackend { scene, noise }
    }

    pub fn render(&self, pose: &Pose<S>) -> SyntheticView<S> {
        SyntheticView {
            pose: *pose,
            observations: observe(&self.scene, pose),
        }
    }
}

impl<S: Scalar> Matcher<S> for SyntheticBackend<S> {
    type View = SyntheticView<S>;

    fn match_views(
        &self,
        query: &SyntheticView<S>,
        rendered: &SyntheticView<S>,
    ) -> Result<CorrespondenceSet<S>, MatchFailure> {
        let labeled = synth_match(&self.scene, &query.pose, &rendered.pose, &self.noise);
        if labeled.set.is_empty() {
            return Err(MatchFailure::new("no shared keypoints between views"));
        }
        Ok(labeled.set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epipolar;
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn test_intrinsics() -> Intrinsics<f64> {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn unit_box() -> ExtentBox {
        ExtentBox::new([-1.0, -1.0, 3.0], [1.0, 1.0, 6.0]).unwrap()
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let a = generate_scene(100, &unit_box(), test_intrinsics(), 1).unwrap();
        let b = generate_scene(100, &unit_box(), test_intrinsics(), 1).unwrap();
        assert_eq!(a.points, b.points);
    }

    #[test]
    fn scene_rejects_too_few_points() {
        assert!(matches!(
            generate_scene(7, &unit_box(), test_intrinsics(), 1),
            Err(SynthError::TooFewPoints(7))
        ));
    }

    #[test]
    fn scene_points_inside_declared_box() {
        let boxx = unit_box();
        let scene = generate_scene(200, &boxx, test_intrinsics(), 9).unwrap();
        for p in &scene.points {
            assert!(boxx.contains(&[p[0], p[1], p[2]]));
        }
    }

    #[test]
    fn extent_box_rejects_negative_volume() {
        assert!(ExtentBox::new([1.0, 0.0, 0.0], [-1.0, 1.0, 1.0]).is_err());
    }

    #[test]
    fn observe_looking_away_is_empty() {
        let scene = generate_scene(50, &unit_box(), test_intrinsics(), 2).unwrap();
        // Rotate the camera 180 degrees about y: scene ends up behind it.
        let away = Pose::new(
            so3_exp(&Vector3::new(0.0, std::f64::consts::PI, 0.0)),
            Vector3::zeros(),
        );
        assert!(observe(&scene, &away).is_empty());
    }

    #[test]
    fn observe_on_axis_point_hits_principal_point() {
        let scene = SyntheticScene {
            points: vec![Vector3::new(0.0, 0.0, 2.0); 8],
            intrinsics: test_intrinsics(),
            seed: 0,
        };
        let obs = observe(&scene, &Pose::identity());
        assert_eq!(obs.len(), 8);
        assert_eq!(obs[0].1, PixelPoint::new(320.0, 240.0));
    }

    #[test]
    fn observation_count_decreases_moving_forward_past_points() {
        let scene = generate_scene(300, &unit_box(), test_intrinsics(), 3).unwrap();
        // Advancing the camera center along +z walks it into and past the
        // cloud, so the visible count is non-increasing.
        let mut prev = usize::MAX;
        for step in 0..6 {
            let z = 2.0 + step as f64;
            // camera center at (0,0,z) means t = -R c = (0,0,-z)
            let pose = Pose::from_translation(Vector3::new(0.0, 0.0, -z));
            let count = observe(&scene, &pose).len();
            assert!(count <= prev, "count {count} grew past {prev}");
            prev = count;
        }
    }

    #[test]
    fn clean_matches_are_exact_and_epipolar_consistent() {
        let scene = generate_scene(120, &unit_box(), test_intrinsics(), 4).unwrap();
        let query = Pose::identity();
        let view = Pose::new(
            so3_exp(&Vector3::new(0.02, -0.03, 0.01)),
            Vector3::new(0.2, -0.1, 0.05),
        );
        let labeled = synth_match(&scene, &query, &view, &NoiseSpec::clean(5));
        assert!(labeled.outlier_indices.is_empty());
        assert!(labeled.set.len() > 20);

        // T_vq maps query-camera coordinates into view-camera coordinates.
        let t_vq = view * query.inverse();
        for rec in labeled.set.records() {
            let line = epipolar::epipolar_line(
                &scene.intrinsics,
                &t_vq.rotation,
                &t_vq.translation,
                &rec.query_point,
            )
            .unwrap();
            let d = epipolar::epipolar_distance(&rec.view_point, &line).unwrap();
            assert!(d.abs() < 1e-9, "epipolar distance {d:e}");
        }
    }

    #[test]
    fn full_outlier_rate_breaks_epipolar_consistency() {
        let scene = generate_scene(200, &unit_box(), test_intrinsics(), 6).unwrap();
        let query = Pose::identity();
        let view = Pose::new(
            so3_exp(&Vector3::new(0.0, 0.01, 0.0)),
            Vector3::new(0.3, 0.0, 0.0),
        );
        let noise = NoiseSpec {
            pixel_sigma: 0.0,
            outlier_rate: 1.0,
            dropout_rate: 0.0,
            seed: 7,
        };
        let labeled = synth_match(&scene, &query, &view, &noise);
        assert_eq!(labeled.outlier_indices.len(), labeled.set.len());
        let t_vq = view * query.inverse();
        let mut consistent = 0usize;
        for rec in labeled.set.records() {
            let line = epipolar::epipolar_line(
                &scene.intrinsics,
                &t_vq.rotation,
                &t_vq.translation,
                &rec.query_point,
            )
            .unwrap();
            let d = epipolar::epipolar_distance(&rec.view_point, &line).unwrap();
            if d.abs() < 0.1 {
                consistent += 1;
            }
        }
        // A uniform pixel has well under 1e-3 probability of landing within
        // 0.1 px of the line; none of ~200 should.
        assert_eq!(consistent, 0);
    }

    #[test]
    fn dropout_rate_matches_binomial_interval() {
        // 200 shared points at 50% dropout: the 99% binomial interval for the
        // survivor count is [75, 125].
        let k = test_intrinsics();
        let points: Vec<Vector3<f64>> = generate_scene(400, &unit_box(), k, 8)
            .unwrap()
            .points
            .into_iter()
            .filter(|p| {
                project(&k, &Pose::identity(), p)
                    .map(|px| k.contains(&px))
                    .unwrap_or(false)
            })
            .take(200)
            .collect();
        assert_eq!(points.len(), 200);
        let scene = SyntheticScene {
            points,
            intrinsics: k,
            seed: 0,
        };
        let noise = NoiseSpec {
            pixel_sigma: 0.0,
            outlier_rate: 0.0,
            dropout_rate: 0.5,
            seed: 21,
        };
        let labeled = synth_match(&scene, &Pose::identity(), &Pose::identity(), &noise);
        let n = labeled.set.len();
        assert!((75..=125).contains(&n), "survivors = {n}");
    }

    #[test]
    fn zero_sigma_perturbations_copy_base() {
        let base = Pose::new(
            so3_exp(&Vector3::new(0.1, 0.2, 0.3)),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let spec = PerturbationSpec {
            sigma_t: 0.0,
            sigma_r_deg: 0.0,
            count: 4,
            seed: 1,
        };
        let poses = sample_perturbations(&base, &spec);
        assert_eq!(poses.len(), 4);
        for p in poses {
            assert_eq!(p, base);
        }
    }

    #[test]
    fn perturbations_are_deterministic() {
        let base = Pose::identity();
        let spec = PerturbationSpec {
            sigma_t: 0.04,
            sigma_r_deg: 0.5,
            count: 6,
            seed: 17,
        };
        let a = sample_perturbations(&base, &spec);
        let b = sample_perturbations(&base, &spec);
        assert_eq!(a, b);
    }

    #[test]
    fn translation_noise_second_moment() {
        // E[|dt|^2] = 3 sigma^2 for per-axis Gaussian noise (chi-square with
        // 3 degrees of freedom); check to 5% over 1e4 draws.
        let base = Pose::identity();
        let spec = PerturbationSpec {
            sigma_t: 0.04,
            sigma_r_deg: 0.0,
            count: 10_000,
            seed: 33,
        };
        let poses = sample_perturbations(&base, &spec);
        let mean_sq: f64 = poses
            .iter()
            .map(|p| p.translation.norm_squared())
            .sum::<f64>()
            / poses.len() as f64;
        let expected = 3.0 * 0.04 * 0.04;
        assert_relative_eq!(mean_sq, expected, max_relative = 0.05);
    }

    #[test]
    fn matcher_noise_differs_between_views_but_is_reproducible() {
        let scene = generate_scene(150, &unit_box(), test_intrinsics(), 10).unwrap();
        let backend = SyntheticBackend::new(
            scene,
            NoiseSpec {
                pixel_sigma: 0.5,
                outlier_rate: 0.0,
                dropout_rate: 0.0,
                seed: 3,
            },
        );
        let query = backend.render(&Pose::identity());
        let v1 = backend.render(&Pose::from_translation(Vector3::new(0.1, 0.0, 0.0)));
        let v2 = backend.render(&Pose::from_translation(Vector3::new(0.0, 0.1, 0.0)));
        let m1 = backend.match_views(&query, &v1).unwrap();
        let m1_again = backend.match_views(&query, &v1).unwrap();
        let m2 = backend.match_views(&query, &v2).unwrap();
        assert_eq!(m1, m1_again);
        assert_ne!(m1, m2);
    }
}
