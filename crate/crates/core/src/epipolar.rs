//! Relative pose estimation from 2D-2D correspondences: essential-matrix
//! RANSAC with the normalized eight-point solver, essential decomposition
//! with cheirality disambiguation, and the epipolar line/distance primitives
//! shared with the refinement objective.
//!
//! Conventions: a correspondence pairs `u_i` in the query image with `u_j`
//! in the rendered view, and satisfies `x_j^T E x_i = 0` in normalized
//! coordinates with `E = hat(t) R` for the transform mapping the query
//! camera frame into the view camera frame.

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::camera::{Intrinsics, PixelPoint};
use crate::lie::{hat, Rotation};
use crate::matching::{CorrespondenceSet, MatchRecord};
use crate::scalar::{cast, Scalar};

/// Baselines below this are treated as pure rotation (no epipolar geometry).
const MIN_BASELINE: f64 = 1e-12;
/// Relative singular-value cutoff for a rank-deficient eight-point system.
const RANK_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum EpipolarError {
    #[error("need at least {need} matches, got {got}")]
    InsufficientData { got: usize, need: usize },
    #[error("degenerate point configuration for the eight-point solver")]
    DegenerateConfiguration,
    #[error("no essential decomposition puts a majority of points in front of both cameras")]
    CheiralityFailure,
    #[error("translation too small for epipolar geometry (|t| <= 1e-12)")]
    DegenerateEpipolarGeometry,
    #[error("epipolar line has zero normal (p_x = p_y = 0)")]
    DegenerateLine,
    #[error("no consensus model with at least {need} inliers (best had {best})")]
    RobustFailure { best: usize, need: usize },
}

/// Essential matrix, defined up to scale; kept with singular values
/// `(1, 1, 0)` by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssentialMatrix<S: Scalar>(Matrix3<S>);

impl<S: Scalar> EssentialMatrix<S> {
    /// Projects an arbitrary matrix onto the essential manifold: singular
    /// values are replaced by their mean `(s1 + s2) / 2` twice and zero,
    /// then normalized to `(1, 1, 0)`.
    pub fn project(m: &Matrix3<S>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.expect("3x3 svd");
        let v_t = svd.v_t.expect("3x3 svd");
        let diag = Matrix3::from_diagonal(&Vector3::new(S::one(), S::one(), S::zero()));
        EssentialMatrix(u * diag * v_t)
    }

    /// Builds `hat(t) * R` and projects it; the ground-truth construction.
    pub fn from_pose(rotation: &Rotation<S>, translation: &Vector3<S>) -> Self {
        EssentialMatrix::project(&(hat(translation) * rotation.matrix()))
    }

    pub fn matrix(&self) -> &Matrix3<S> {
        &self.0
    }
}

/// Which way the estimated transform maps camera frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformDirection {
    /// Maps rendered-view camera coordinates into the query camera frame.
    RenderedToQuery,
    /// Maps query camera coordinates into the rendered-view camera frame.
    QueryToRendered,
}

/// Scale-ambiguous relative pose: rotation plus a unit translation
/// direction, with the supporting inlier indices.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativePoseEstimate<S: Scalar> {
    pub rotation: Rotation<S>,
    /// Unit-norm translation direction; the true translation is `s * direction`
    /// for an unknown positive scale `s`.
    pub direction: Vector3<S>,
    /// Indices into the correspondence set that support the estimate.
    pub inliers: Vec<usize>,
    pub direction_of_transform: TransformDirection,
}

impl<S: Scalar> RelativePoseEstimate<S> {
    /// The same estimate expressed in the opposite direction:
    /// `R -> R^T`, `t -> -R^T t` (still unit norm).
    pub fn inverted(&self) -> Self {
        let rotation = self.rotation.inverse();
        RelativePoseEstimate {
            rotation,
            direction: -(rotation * self.direction),
            inliers: self.inliers.clone(),
            direction_of_transform: match self.direction_of_transform {
                TransformDirection::RenderedToQuery => TransformDirection::QueryToRendered,
                TransformDirection::QueryToRendered => TransformDirection::RenderedToQuery,
            },
        }
    }
}

/// RANSAC settings for relative pose estimation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig<S: Scalar> {
    pub max_iterations: usize,
    /// Symmetric epipolar distance threshold, pixels.
    pub inlier_threshold_px: S,
    /// Target probability of sampling one all-inlier minimal set.
    pub confidence: S,
    /// Minimum usable matches; at least 8 regardless of the configured value.
    pub min_matches: usize,
    pub seed: u64,
}

impl<S: Scalar> Default for RansacConfig<S> {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 2000,
            inlier_threshold_px: cast(1.5),
            confidence: cast(0.999),
            min_matches: 8,
            seed: 0,
        }
    }
}

/// Least-squares essential matrix from at least eight normalized pairs
/// `(x_query, x_view)`, conditioned by Hartley normalization and projected
/// onto the essential manifold.
pub fn eight_point<S: Scalar>(
    pairs: &[(Vector3<S>, Vector3<S>)],
) -> Result<EssentialMatrix<S>, EpipolarError> {
    let n = pairs.len();
    if n < 8 {
        return Err(EpipolarError::InsufficientData { got: n, need: 8 });
    }
    let t_q = hartley_transform(pairs.iter().map(|p| &p.0))?;
    let t_v = hartley_transform(pairs.iter().map(|p| &p.1))?;

    // Padding to 9 rows keeps the SVD square on the right, so the null-space
    // vector is present in v_t even for a minimal 8-pair sample.
    let mut a = DMatrix::<S>::zeros(n.max(9), 9);
    for (row, (x_i, x_j)) in pairs.iter().enumerate() {
        let q = t_q * x_i;
        let v = t_v * x_j;
        for r in 0..3 {
            for c in 0..3 {
                a[(row, 3 * r + c)] = v[r] * q[c];
            }
        }
    }

    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    // Rank 8 is required for a one-dimensional null space.
    if sv[7] < sv[0] * cast::<S>(RANK_TOLERANCE) {
        return Err(EpipolarError::DegenerateConfiguration);
    }
    let v_t = svd.v_t.expect("svd with v_t");
    let e_vec = v_t.row(v_t.nrows() - 1);
    let e_cond = Matrix3::new(
        e_vec[0], e_vec[1], e_vec[2], e_vec[3], e_vec[4], e_vec[5], e_vec[6], e_vec[7], e_vec[8],
    );
    // Undo conditioning: x_v^T E x_q = (T_v x_v)^T E' (T_q x_q).
    let e = t_v.transpose() * e_cond * t_q;
    Ok(EssentialMatrix::project(&e))
}

/// Isotropic conditioning transform: centroid to the origin, mean distance
/// to sqrt(2). Operates on the (x, y) part of z=1 points.
fn hartley_transform<'a, S: Scalar + 'a>(
    points: impl Iterator<Item = &'a Vector3<S>> + Clone,
) -> Result<Matrix3<S>, EpipolarError> {
    let mut count = S::zero();
    let mut mean_x = S::zero();
    let mut mean_y = S::zero();
    for p in points.clone() {
        mean_x += p[0] / p[2];
        mean_y += p[1] / p[2];
        count += S::one();
    }
    mean_x /= count;
    mean_y /= count;
    let mut mean_dist = S::zero();
    for p in points {
        let dx = p[0] / p[2] - mean_x;
        let dy = p[1] / p[2] - mean_y;
        mean_dist += (dx * dx + dy * dy).sqrt();
    }
    mean_dist /= count;
    if mean_dist < cast::<S>(1e-12) {
        return Err(EpipolarError::DegenerateConfiguration);
    }
    let s = cast::<S>(std::f64::consts::SQRT_2) / mean_dist;
    Ok(Matrix3::new(
        s,
        S::zero(),
        -s * mean_x,
        S::zero(),
        s,
        -s * mean_y,
        S::zero(),
        S::zero(),
        S::one(),
    ))
}

/// Factors an essential matrix into the four `(R, +-t)` candidates and picks
/// the one triangulating the most matches with positive depth in both
/// frames. The returned transform maps query to rendered-view coordinates;
/// `inliers` holds the positive-depth match indices.
pub fn decompose_essential<S: Scalar>(
    e: &EssentialMatrix<S>,
    matches: &[MatchRecord<S>],
    k: &Intrinsics<S>,
) -> Result<RelativePoseEstimate<S>, EpipolarError> {
    if matches.is_empty() {
        return Err(EpipolarError::InsufficientData { got: 0, need: 1 });
    }
    let normalized: Vec<(Vector3<S>, Vector3<S>)> = matches
        .iter()
        .map(|m| (k.normalize(&m.query_point), k.normalize(&m.view_point)))
        .collect();

    let svd = e.matrix().svd(true, true);
    let mut u = svd.u.expect("3x3 svd");
    let mut v_t = svd.v_t.expect("3x3 svd");
    if u.determinant() < S::zero() {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < S::zero() {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(
        S::zero(),
        -S::one(),
        S::zero(),
        S::one(),
        S::zero(),
        S::zero(),
        S::zero(),
        S::zero(),
        S::one(),
    );
    let r1 = Rotation::from_matrix_unchecked(u * w * v_t);
    let r2 = Rotation::from_matrix_unchecked(u * w.transpose() * v_t);
    let t = Vector3::new(u[(0, 2)], u[(1, 2)], u[(2, 2)]);

    let mut best: Option<(usize, Rotation<S>, Vector3<S>, Vec<usize>)> = None;
    for rotation in [r1, r2] {
        for direction in [t, -t] {
            let mut inliers = Vec::new();
            for (idx, (x_i, x_j)) in normalized.iter().enumerate() {
                if triangulates_in_front(&rotation, &direction, x_i, x_j) {
                    inliers.push(idx);
                }
            }
            if best.as_ref().map_or(true, |b| inliers.len() > b.0) {
                best = Some((inliers.len(), rotation, direction, inliers));
            }
        }
    }
    let (count, rotation, direction, inliers) = best.expect("four candidates evaluated");
    if 2 * count <= matches.len() {
        return Err(EpipolarError::CheiralityFailure);
    }
    Ok(RelativePoseEstimate {
        rotation,
        direction,
        inliers,
        direction_of_transform: TransformDirection::QueryToRendered,
    })
}

/// Triangulates a normalized pair under `x_j ~ R x_i + t` and checks that
/// both depths are positive.
fn triangulates_in_front<S: Scalar>(
    r: &Rotation<S>,
    t: &Vector3<S>,
    x_i: &Vector3<S>,
    x_j: &Vector3<S>,
) -> bool {
    // d_j x_j = d_i R x_i + t; cross with x_j to eliminate d_j.
    let a = x_j.cross(&(*r * *x_i));
    let b = x_j.cross(t);
    let denom = a.norm_squared();
    if denom < cast::<S>(1e-18) {
        return false;
    }
    let d_i = -a.dot(&b) / denom;
    if d_i <= S::zero() {
        return false;
    }
    let p = *r * *x_i * d_i + *t;
    let d_j = p.dot(x_j) / x_j.norm_squared();
    d_j > S::zero()
}

/// Seeded, deterministic RANSAC over eight-point minimal samples with the
/// symmetric epipolar distance as the inlier criterion; the final model is
/// re-estimated on all inliers and decomposed with cheirality.
pub fn estimate_relative_pose<S: Scalar>(
    corr: &CorrespondenceSet<S>,
    k: &Intrinsics<S>,
    cfg: &RansacConfig<S>,
) -> Result<RelativePoseEstimate<S>, EpipolarError> {
    let records = corr.records();
    let n = records.len();
    let need = cfg.min_matches.max(8);
    if n < need {
        return Err(EpipolarError::InsufficientData { got: n, need });
    }

    let pixels: Vec<(Vector3<S>, Vector3<S>)> = records
        .iter()
        .map(|m| (m.query_point.homogeneous(), m.view_point.homogeneous()))
        .collect();
    let normalized: Vec<(Vector3<S>, Vector3<S>)> = records
        .iter()
        .map(|m| (k.normalize(&m.query_point), k.normalize(&m.view_point)))
        .collect();
    let k_inv = k.inverse_matrix();

    let score = |e: &EssentialMatrix<S>| -> (Vec<usize>, S) {
        let f = k_inv.transpose() * e.matrix() * k_inv;
        let f_t = f.transpose();
        let mut inliers = Vec::new();
        let mut total = S::zero();
        for (idx, (u_i, u_j)) in pixels.iter().enumerate() {
            let d = symmetric_distance(&f, &f_t, u_i, u_j);
            if d < cfg.inlier_threshold_px {
                inliers.push(idx);
                total += d;
            }
        }
        (inliers, total)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best_inliers: Vec<usize> = Vec::new();
    let mut best_score = S::max_value().unwrap();
    let mut needed = cfg.max_iterations;
    let mut iteration = 0;
    while iteration < needed {
        iteration += 1;
        let sample = rand::seq::index::sample(&mut rng, n, 8);
        let minimal: Vec<(Vector3<S>, Vector3<S>)> =
            sample.iter().map(|i| normalized[i]).collect();
        let Ok(e) = eight_point(&minimal) else {
            continue;
        };
        let (inliers, total) = score(&e);
        if std::env::var("EPI_DEBUG").is_ok() && iteration <= 30 {
            eprintln!("iter {iteration}: {} inliers", inliers.len());
        }
        if inliers.len() > best_inliers.len()
            || (inliers.len() == best_inliers.len() && total < best_score)
        {
            best_inliers = inliers;
            best_score = total;
            needed = needed.min(adaptive_bound(
                best_inliers.len(),
                n,
                cfg.confidence,
                cfg.max_iterations,
            ));
        }
    }

    if best_inliers.len() < need {
        return Err(EpipolarError::RobustFailure {
            best: best_inliers.len(),
            need,
        });
    }

    // Re-estimate on all inliers, then refresh the inlier set once.
    let inlier_pairs: Vec<(Vector3<S>, Vector3<S>)> =
        best_inliers.iter().map(|&i| normalized[i]).collect();
    let refined = eight_point(&inlier_pairs)?;
    let (final_inliers, _) = score(&refined);
    if std::env::var("EPI_DEBUG").is_ok() {
        eprintln!(
            "loop end: best {} inliers, refit scored {}",
            best_inliers.len(),
            final_inliers.len()
        );
    }
    if final_inliers.len() < need {
        return Err(EpipolarError::RobustFailure {
            best: final_inliers.len(),
            need,
        });
    }

    let inlier_records: Vec<MatchRecord<S>> =
        final_inliers.iter().map(|&i| records[i]).collect();
    let decomposed = decompose_essential(&refined, &inlier_records, k)?;
    Ok(RelativePoseEstimate {
        rotation: decomposed.rotation,
        direction: decomposed.direction,
        inliers: final_inliers,
        direction_of_transform: TransformDirection::QueryToRendered,
    })
}

/// Standard adaptive RANSAC bound: iterations needed to sample one
/// uncontaminated minimal set with the requested confidence.
fn adaptive_bound<S: Scalar>(inliers: usize, total: usize, confidence: S, cap: usize) -> usize {
    if inliers == 0 {
        return cap;
    }
    let w = inliers as f64 / total as f64;
    let denom = 1.0 - w.powi(8);
    if denom <= f64::EPSILON {
        return 1;
    }
    let conf = crate::scalar::to_f64(confidence).clamp(0.0, 1.0 - 1e-12);
    let needed = (1.0 - conf).ln() / denom.ln();
    if !needed.is_finite() {
        return cap;
    }
    (needed.ceil().max(1.0) as usize).min(cap)
}

/// Mean of the absolute point-to-line distances in both images.
fn symmetric_distance<S: Scalar>(
    f: &Matrix3<S>,
    f_t: &Matrix3<S>,
    u_i: &Vector3<S>,
    u_j: &Vector3<S>,
) -> S {
    let line_v = f * u_i;
    let line_q = f_t * u_j;
    let d_v = point_line_distance(u_j, &line_v);
    let d_q = point_line_distance(u_i, &line_q);
    (d_v.abs() + d_q.abs()) / cast::<S>(2.0)
}

fn point_line_distance<S: Scalar>(u: &Vector3<S>, line: &Vector3<S>) -> S {
    let norm = (line[0] * line[0] + line[1] * line[1]).sqrt();
    if norm < cast::<S>(1e-300) {
        return S::max_value().unwrap();
    }
    u.dot(line) / norm
}

/// Coefficients of the epipolar line in the rendered view induced by the
/// query pixel `u_i`: `p = K^-T hat(t_sq) R_sq K^-1 u_i`. Not normalized;
/// [`epipolar_distance`] divides by the line normal.
pub fn epipolar_line<S: Scalar>(
    k: &Intrinsics<S>,
    r_sq: &Rotation<S>,
    t_sq: &Vector3<S>,
    u_i: &PixelPoint<S>,
) -> Result<Vector3<S>, EpipolarError> {
    if t_sq.norm() <= cast::<S>(MIN_BASELINE) {
        return Err(EpipolarError::DegenerateEpipolarGeometry);
    }
    let k_inv = k.inverse_matrix();
    Ok(k_inv.transpose() * hat(t_sq) * r_sq.matrix() * k_inv * u_i.homogeneous())
}

/// Signed distance from pixel `u_j` to the line `p`:
/// `u_j . p / sqrt(p_x^2 + p_y^2)`. Consumers square or take the absolute
/// value; the sign feeds analytic Jacobians.
pub fn epipolar_distance<S: Scalar>(
    u_j: &PixelPoint<S>,
    p: &Vector3<S>,
) -> Result<S, EpipolarError> {
    let norm_sq = p[0] * p[0] + p[1] * p[1];
    if norm_sq == S::zero() {
        return Err(EpipolarError::DegenerateLine);
    }
    Ok(u_j.homogeneous().dot(p) / norm_sq.sqrt())
}
