//! Alignment between calibrated world-frame camera poses and
//! reconstruction-frame poses that are only known up to scale.
//!
//! A reconstruction pipeline reports camera poses in an arbitrary frame V
//! with an unknown global scale. Given paired poses
//! {(wTc_k, vHc_k)} we recover the scale factor from relative translations
//! between consecutive steps, rescale the reconstruction poses to meters,
//! and compute a per-step frame transform vTw_k = vTc_k * (wTc_k)^-1. The
//! per-step transforms are kept separate (no averaging); in the noiseless
//! case they coincide.

use crate::error::{CoreError, Result};
use crate::se3::{compose, inverse, Rotation, Transform};
use crate::vec3::Vec3;
use std::fmt::Write as _;
use std::path::Path;

/// Rigid transform whose translation is in reconstruction units rather
/// than meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledTransform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl ScaledTransform {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        ScaledTransform {
            rotation,
            translation,
        }
    }

    /// Reinterpret the numbers as a metric transform (used when training a
    /// field directly in reconstruction coordinates).
    pub fn as_transform(&self) -> Transform {
        Transform::new(self.rotation, self.translation)
    }

    pub fn from_transform(t: &Transform) -> Self {
        ScaledTransform::new(t.rotation, t.translation)
    }

    pub fn to_row_major(&self) -> [f64; 12] {
        self.as_transform().to_row_major()
    }

    pub fn from_row_major(v: &[f64; 12]) -> Self {
        ScaledTransform::from_transform(&Transform::from_row_major(v))
    }
}

/// One calibrated/reconstructed pose pair for step k.
#[derive(Debug, Clone, Copy)]
pub struct PosePair {
    /// Camera-to-world pose, meters.
    pub world: Transform,
    /// Camera-to-reconstruction pose, reconstruction units.
    pub sfm: ScaledTransform,
}

/// Recovered scale plus the per-step frame transforms.
#[derive(Debug, Clone)]
pub struct AlignmentSolution {
    /// Reconstruction units per meter.
    pub scale_beta: f64,
    /// vTw_k for each step, metric.
    pub v_t_w: Vec<Transform>,
}

impl AlignmentSolution {
    pub fn len(&self) -> usize {
        self.v_t_w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v_t_w.is_empty()
    }

    /// Single averaged frame transform, for diagnostics only: arithmetic
    /// mean of translations, chordal mean of rotations projected back to
    /// SO(3).
    pub fn averaged_frame(&self) -> Transform {
        assert!(!self.v_t_w.is_empty());
        let n = self.v_t_w.len() as f64;
        let mut t = Vec3::ZERO;
        let mut m = [[0.0f64; 3]; 3];
        for tf in &self.v_t_w {
            t += tf.translation;
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += tf.rotation.m[i][j];
                }
            }
        }
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        Transform::new(Rotation::from_rows(m).orthonormalized(), t / n)
    }
}

const MIN_MOTION: f64 = 1e-9;

/// Least-squares scale from consecutive relative translations.
///
/// For each consecutive pair (j, j+1) the relative translation in the two
/// frames satisfies beta * t(cTw_j wTc_{j+1}) = t(cHv_j vHc_{j+1}); the
/// stacked 3-vector regression through the origin gives
/// beta = sum <x, y> / sum <x, x>.
pub fn estimate_scale(pairs: &[PosePair]) -> Result<f64> {
    if pairs.len() < 2 {
        return Err(CoreError::DegenerateMotion);
    }
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    let mut max_motion = 0.0f64;
    for w in pairs.windows(2) {
        let x = relative_translation(&w[0].world, &w[1].world);
        let y = relative_translation(
            &w[0].sfm.as_transform(),
            &w[1].sfm.as_transform(),
        );
        max_motion = max_motion.max(x.norm());
        num += x.dot(y);
        den += x.dot(x);
    }
    if max_motion < MIN_MOTION {
        return Err(CoreError::DegenerateMotion);
    }
    Ok(num / den)
}

/// Translation of a^-1 * b.
fn relative_translation(a: &Transform, b: &Transform) -> Vec3 {
    compose(&inverse(a), b).translation
}

/// Divide the translation by the scale factor, leaving rotation unchanged.
pub fn rescale(h: &ScaledTransform, scale_beta: f64) -> Result<Transform> {
    if scale_beta <= 0.0 {
        return Err(CoreError::InvalidScale(scale_beta));
    }
    Ok(Transform::new(h.rotation, h.translation / scale_beta))
}

/// Per-step frame transforms vTw_k = vTc_k * (wTc_k)^-1 with vTc_k the
/// rescaled reconstruction pose.
pub fn estimate_frame(pairs: &[PosePair], scale_beta: f64) -> Result<AlignmentSolution> {
    if scale_beta <= 0.0 {
        return Err(CoreError::InvalidScale(scale_beta));
    }
    let mut v_t_w = Vec::with_capacity(pairs.len());
    for p in pairs {
        let v_t_c = rescale(&p.sfm, scale_beta)?;
        v_t_w.push(compose(&v_t_c, &inverse(&p.world)));
    }
    Ok(AlignmentSolution { scale_beta, v_t_w })
}

/// Convenience: scale estimate followed by per-step frames.
pub fn solve(pairs: &[PosePair]) -> Result<AlignmentSolution> {
    let beta = estimate_scale(pairs)?;
    estimate_frame(pairs, beta)
}

/// Map a (possibly perturbed) world-frame camera pose at step k into the
/// reconstruction frame and units: (R, beta * t) of vTw_k * wTc.
pub fn world_to_sfm(
    w_t_c_perturbed: &Transform,
    sol: &AlignmentSolution,
    k: usize,
) -> Result<ScaledTransform> {
    let v_t_w = sol.v_t_w.get(k).ok_or(CoreError::IndexOutOfRange {
        index: k,
        len: sol.v_t_w.len(),
    })?;
    let v_t_c = compose(v_t_w, w_t_c_perturbed);
    Ok(ScaledTransform::new(
        v_t_c.rotation,
        v_t_c.translation * sol.scale_beta,
    ))
}

/// Parse a pose-pair file: one record per line, `k world(12) sfm(12)`.
/// Lines starting with '#' are skipped.
pub fn read_pose_pairs(path: &Path) -> Result<Vec<PosePair>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::Parse {
                path: format!("{}:{}", path.display(), lineno + 1),
                msg: e.to_string(),
            })?;
        if fields.len() != 25 {
            return Err(CoreError::Parse {
                path: format!("{}:{}", path.display(), lineno + 1),
                msg: format!("expected 25 fields (k + 12 + 12), got {}", fields.len()),
            });
        }
        let mut w = [0.0; 12];
        let mut s = [0.0; 12];
        w.copy_from_slice(&fields[1..13]);
        s.copy_from_slice(&fields[13..25]);
        out.push(PosePair {
            world: Transform::from_row_major(&w),
            sfm: ScaledTransform::from_row_major(&s),
        });
    }
    Ok(out)
}

pub fn write_pose_pairs(path: &Path, pairs: &[PosePair]) -> Result<()> {
    let mut out = String::new();
    for (k, p) in pairs.iter().enumerate() {
        let mut row = format!("{k}");
        for v in p.world.to_row_major().iter().chain(p.sfm.to_row_major().iter()) {
            let _ = write!(row, " {v:.17e}");
        }
        out.push_str(&row);
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Structured-text report of an alignment solution: the scale factor and
/// the per-step 3x4 transforms.
pub fn format_solution(sol: &AlignmentSolution) -> String {
    let mut s = format!("scale_beta {:.17e}\n", sol.scale_beta);
    for (k, t) in sol.v_t_w.iter().enumerate() {
        let mut row = format!("v_T_w {k}");
        for v in t.to_row_major() {
            let _ = write!(row, " {v:.17e}");
        }
        s.push_str(&row);
        s.push('\n');
    }
    s
}


#[cfg(test)]
mod tests {
    use super::test_support::synthetic_pairs;
    use super::*;
    use crate::se3::{from_euler, EulerAngles};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn some_frame() -> Transform {
        Transform::new(
            from_euler(EulerAngles::new(0.3, -0.5, 1.1)),
            Vec3::new(0.4, -0.2, 0.9),
        )
    }

    #[test]
    fn identity_scale_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pairs = synthetic_pairs(&mut rng, 10, 1.0, &some_frame(), 0.0);
        let beta = estimate_scale(&pairs).unwrap();
        assert!((beta - 1.0).abs() < 1e-9);
    }

    #[test]
    fn scale_two_recovered_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let pairs = synthetic_pairs(&mut rng, 12, 2.0, &some_frame(), 0.0);
        let beta = estimate_scale(&pairs).unwrap();
        assert!((beta - 2.0).abs() < 1e-9, "got {beta}");
    }

    #[test]
    fn scale_within_one_percent_under_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let pairs = synthetic_pairs(&mut rng, 20, 2.0, &some_frame(), 1e-3);
        let beta = estimate_scale(&pairs).unwrap();
        assert!((beta - 2.0).abs() / 2.0 < 0.01, "got {beta}");
    }

    #[test]
    fn scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let pairs = synthetic_pairs(&mut rng, 10, 1.5, &some_frame(), 0.0);
        let scaled: Vec<PosePair> = pairs
            .iter()
            .map(|p| PosePair {
                world: p.world,
                sfm: ScaledTransform::new(p.sfm.rotation, p.sfm.translation * 3.0),
            })
            .collect();
        let b1 = estimate_scale(&pairs).unwrap();
        let b2 = estimate_scale(&scaled).unwrap();
        assert!((b2 - 3.0 * b1).abs() < 1e-9);
    }

    #[test]
    fn degenerate_motion_detected() {
        let world = Transform::identity();
        let sfm = ScaledTransform::new(Rotation::identity(), Vec3::ZERO);
        let pairs = vec![PosePair { world, sfm }; 5];
        assert!(matches!(
            estimate_scale(&pairs),
            Err(CoreError::DegenerateMotion)
        ));
        assert!(matches!(
            estimate_scale(&pairs[..1]),
            Err(CoreError::DegenerateMotion)
        ));
    }

    #[test]
    fn rescale_basics() {
        let h = ScaledTransform::new(Rotation::identity(), Vec3::new(2.0, 0.0, 0.0));
        let t = rescale(&h, 2.0).unwrap();
        assert!((t.translation - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
        let same = rescale(&h, 1.0).unwrap();
        assert_eq!(same.translation, h.translation);
        assert!(matches!(rescale(&h, 0.0), Err(CoreError::InvalidScale(_))));
        assert!(matches!(rescale(&h, -1.0), Err(CoreError::InvalidScale(_))));
    }

    #[test]
    fn frame_identity_when_v_equals_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let pairs = synthetic_pairs(&mut rng, 8, 1.0, &Transform::identity(), 0.0);
        let sol = estimate_frame(&pairs, 1.0).unwrap();
        for t in &sol.v_t_w {
            assert!(t.max_abs_diff(&Transform::identity()) < 1e-12);
        }
    }

    #[test]
    fn construct_then_recover_pipeline() {
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let truth = some_frame();
        let beta = 2.7;
        let pairs = synthetic_pairs(&mut rng, 9, beta, &truth, 0.0);
        let sol = solve(&pairs).unwrap();
        assert!((sol.scale_beta - beta).abs() < 1e-9);
        for t in &sol.v_t_w {
            assert!(t.max_abs_diff(&truth) < 1e-9);
        }
        // unperturbed world pose maps back to the original reconstruction pose
        for (k, p) in pairs.iter().enumerate() {
            let h = world_to_sfm(&p.world, &sol, k).unwrap();
            let d = h
                .as_transform()
                .max_abs_diff(&p.sfm.as_transform());
            assert!(d < 1e-9, "step {k}: {d}");
        }
    }

    #[test]
    fn noisy_frames_scatter_near_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let truth = some_frame();
        let sigma = 1e-3;
        let pairs = synthetic_pairs(&mut rng, 20, 1.0, &truth, sigma);
        let sol = solve(&pairs).unwrap();
        let mean_err: f64 = sol
            .v_t_w
            .iter()
            .map(|t| t.rotation.angle_to(&truth.rotation))
            .sum::<f64>()
            / sol.v_t_w.len() as f64;
        // small-angle noise of scale sigma on each axis
        assert!(mean_err < 2.0 * sigma * 3.0f64.sqrt(), "mean {mean_err}");
    }

    #[test]
    fn world_shift_maps_through_frame_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(38);
        let truth = some_frame();
        let beta = 2.0;
        let pairs = synthetic_pairs(&mut rng, 6, beta, &truth, 0.0);
        let sol = solve(&pairs).unwrap();
        let k = 3;
        let shift = Vec3::new(0.001, 0.0, 0.0);
        let shifted = Transform::new(
            pairs[k].world.rotation,
            pairs[k].world.translation + shift,
        );
        let h0 = world_to_sfm(&pairs[k].world, &sol, k).unwrap();
        let h1 = world_to_sfm(&shifted, &sol, k).unwrap();
        let delta = h1.translation - h0.translation;
        // 1 mm world shift becomes beta * rotated 1 mm in reconstruction units
        let want = truth.rotation.apply(shift) * beta;
        assert!((delta - want).norm() < 1e-9);
    }

    #[test]
    fn out_of_range_index_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(39);
        let pairs = synthetic_pairs(&mut rng, 4, 1.0, &Transform::identity(), 0.0);
        let sol = solve(&pairs).unwrap();
        assert!(matches!(
            world_to_sfm(&pairs[0].world, &sol, 10),
            Err(CoreError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn pose_pair_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let pairs = synthetic_pairs(&mut rng, 5, 1.3, &some_frame(), 0.0);
        let path = std::env::temp_dir().join(format!("pairs-{}.txt", std::process::id()));
        write_pose_pairs(&path, &pairs).unwrap();
        let back = read_pose_pairs(&path).unwrap();
        assert_eq!(back.len(), pairs.len());
        for (a, b) in back.iter().zip(pairs.iter()) {
            assert!(a.world.max_abs_diff(&b.world) < 1e-15);
            assert!(
                a.sfm.as_transform().max_abs_diff(&b.sfm.as_transform()) < 1e-15
            );
        }
        let _ = std::fs::remove_file(&path);
    }
}
