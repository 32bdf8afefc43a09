//! Rigid-transform algebra for the frame chains used everywhere in the
//! pipeline: world (W), end-effector (E), camera (C), and the
//! scale-ambiguous reconstruction frame (V).
//!
//! Rotations are stored as explicit 3x3 matrices so that frame products can
//! be checked directly against a 4x4 homogeneous-matrix oracle. Euler
//! parameterization is intrinsic X-Y-Z (roll, pitch, yaw). Perturbations are
//! sampled per-component uniform in Euler angles and translation, and the
//! corrective relative action for a perturbation `eps` applied after pose `T`
//! is `eps^-1 * a`, which restores the original desired world pose:
//! `(T * eps) * (eps^-1 * a) = T * a`.

use crate::error::{CoreError, Result};
use crate::vec3::Vec3;
use rand::Rng;

/// Proper rotation (orthonormal 3x3 matrix with determinant +1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation {
    /// Row-major 3x3 matrix.
    pub m: [[f64; 3]; 3],
}

/// Euler parameterization: intrinsic rotations about X, then Y, then Z.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerAngles {
    pub phi: f64,
    pub theta: f64,
    pub varphi: f64,
}

impl EulerAngles {
    pub fn new(phi: f64, theta: f64, varphi: f64) -> Self {
        EulerAngles { phi, theta, varphi }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.phi, self.theta, self.varphi]
    }
}

/// Max absolute off-orthonormality before a compose result is repaired.
const ORTHO_REPAIR_THRESHOLD: f64 = 1e-7;

impl Rotation {
    pub fn identity() -> Self {
        Rotation {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn from_rows(m: [[f64; 3]; 3]) -> Self {
        Rotation { m }
    }

    /// Rotation about the x axis.
    pub fn about_x(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rotation {
            m: [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        }
    }

    /// Rotation about the y axis.
    pub fn about_y(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rotation {
            m: [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        }
    }

    /// Rotation about the z axis.
    pub fn about_z(a: f64) -> Self {
        let (s, c) = a.sin_cos();
        Rotation {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Rodrigues formula for a unit axis and angle.
    pub fn from_axis_angle(axis: Vec3, angle: f64) -> Self {
        let a = axis.normalized();
        let (s, c) = angle.sin_cos();
        let t = 1.0 - c;
        let (x, y, z) = (a.x, a.y, a.z);
        Rotation {
            m: [
                [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
                [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
                [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
            ],
        }
    }

    pub fn transpose(&self) -> Rotation {
        let m = &self.m;
        Rotation {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn mul(&self, o: &Rotation) -> Rotation {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] =
                    self.m[i][0] * o.m[0][j] + self.m[i][1] * o.m[1][j] + self.m[i][2] * o.m[2][j];
            }
        }
        Rotation { m: r }
    }

    pub fn apply(&self, v: Vec3) -> Vec3 {
        Vec3::new(
            self.m[0][0] * v.x + self.m[0][1] * v.y + self.m[0][2] * v.z,
            self.m[1][0] * v.x + self.m[1][1] * v.y + self.m[1][2] * v.z,
            self.m[2][0] * v.x + self.m[2][1] * v.y + self.m[2][2] * v.z,
        )
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Max-abs entry of R^T R - I.
    pub fn ortho_error(&self) -> f64 {
        let g = self.transpose().mul(self);
        let mut e: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let target = if i == j { 1.0 } else { 0.0 };
                e = e.max((g.m[i][j] - target).abs());
            }
        }
        e
    }

    /// Nearest proper rotation via Newton iteration for the polar factor,
    /// R <- (R + R^-T) / 2. Converges quadratically near SO(3).
    pub fn orthonormalized(&self) -> Rotation {
        let mut r = *self;
        for _ in 0..32 {
            if r.ortho_error() < 1e-15 {
                break;
            }
            let rit = r.inverse_general().transpose();
            let mut next = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    next[i][j] = 0.5 * (r.m[i][j] + rit.m[i][j]);
                }
            }
            r = Rotation { m: next };
        }
        r
    }

    /// Inverse of the raw matrix (not assuming orthonormality).
    fn inverse_general(&self) -> Rotation {
        let m = &self.m;
        let det = self.det();
        debug_assert!(det.abs() > 1e-12, "singular matrix in polar repair");
        let inv_det = 1.0 / det;
        let mut r = [[0.0; 3]; 3];
        r[0][0] = (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det;
        r[0][1] = (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det;
        r[0][2] = (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det;
        r[1][0] = (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det;
        r[1][1] = (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det;
        r[1][2] = (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det;
        r[2][0] = (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det;
        r[2][1] = (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det;
        r[2][2] = (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det;
        Rotation { m: r }
    }

    /// Geodesic angle between two rotations, in radians.
    ///
    /// Small angles use ||A - B||_F = 2 sqrt(2) |sin(theta/2)|, which stays
    /// well conditioned near zero where the trace formula loses ~8 digits.
    pub fn angle_to(&self, o: &Rotation) -> f64 {
        let mut fro2 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = self.m[i][j] - o.m[i][j];
                fro2 += d * d;
            }
        }
        let s = (fro2.sqrt() / (2.0 * std::f64::consts::SQRT_2)).clamp(0.0, 1.0);
        if s < 0.35 {
            2.0 * s.asin()
        } else {
            let rel = self.transpose().mul(o);
            let tr = rel.m[0][0] + rel.m[1][1] + rel.m[2][2];
            ((tr - 1.0) * 0.5).clamp(-1.0, 1.0).acos()
        }
    }
}

/// Rigid SE(3) transform: rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl Transform {
    pub fn identity() -> Self {
        Transform {
            rotation: Rotation::identity(),
            translation: Vec3::ZERO,
        }
    }

    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Transform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Transform {
            rotation: Rotation::identity(),
            translation: t,
        }
    }

    /// Apply to a point: R p + t.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    /// Row-major 3x4 serialization [r00 r01 r02 t0 | r10 ... t1 | r20 ... t2].
    pub fn to_row_major(&self) -> [f64; 12] {
        let m = &self.rotation.m;
        let t = self.translation;
        [
            m[0][0], m[0][1], m[0][2], t.x, m[1][0], m[1][1], m[1][2], t.y, m[2][0], m[2][1],
            m[2][2], t.z,
        ]
    }

    pub fn from_row_major(v: &[f64; 12]) -> Self {
        Transform {
            rotation: Rotation::from_rows([
                [v[0], v[1], v[2]],
                [v[4], v[5], v[6]],
                [v[8], v[9], v[10]],
            ]),
            translation: Vec3::new(v[3], v[7], v[11]),
        }
    }

    /// Max-abs elementwise difference over the 3x4 representation.
    pub fn max_abs_diff(&self, o: &Transform) -> f64 {
        let a = self.to_row_major();
        let b = o.to_row_major();
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}

/// Uniform SE(3) perturbation bounds: `alpha` radians on each Euler angle,
/// `beta_t` meters on each translation component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub alpha: f64,
    pub beta_t: f64,
}

impl NoiseParams {
    pub fn new(alpha: f64, beta_t: f64) -> Self {
        assert!(alpha >= 0.0 && beta_t >= 0.0, "noise bounds must be >= 0");
        NoiseParams { alpha, beta_t }
    }

    /// Rotation-only variant (used by the homography baseline).
    pub fn rotation_only(self) -> Self {
        NoiseParams {
            alpha: self.alpha,
            beta_t: 0.0,
        }
    }
}

/// a then b: (Ra, ta) * (Rb, tb) = (Ra Rb, Ra tb + ta).
///
/// Re-orthonormalizes the result when accumulated drift exceeds the repair
/// threshold, so long chains keep the rotation invariants.
pub fn compose(a: &Transform, b: &Transform) -> Transform {
    let mut rotation = a.rotation.mul(&b.rotation);
    if rotation.ortho_error() > ORTHO_REPAIR_THRESHOLD {
        rotation = rotation.orthonormalized();
    }
    Transform {
        rotation,
        translation: a.rotation.apply(b.translation) + a.translation,
    }
}

/// (R, t)^-1 = (R^T, -R^T t).
pub fn inverse(t: &Transform) -> Transform {
    let rt = t.rotation.transpose();
    Transform {
        translation: -rt.apply(t.translation),
        rotation: rt,
    }
}

/// Intrinsic X-Y-Z: R = Rx(phi) Ry(theta) Rz(varphi).
pub fn from_euler(e: EulerAngles) -> Rotation {
    Rotation::about_x(e.phi)
        .mul(&Rotation::about_y(e.theta))
        .mul(&Rotation::about_z(e.varphi))
}

/// Recover intrinsic X-Y-Z angles. At gimbal lock (|theta| = pi/2) the
/// decomposition is degenerate; the canonical representative fixes
/// varphi = 0 and the returned flag is true.
pub fn to_euler_checked(r: &Rotation) -> (EulerAngles, bool) {
    let m = &r.m;
    let s_theta = m[0][2].clamp(-1.0, 1.0);
    let theta = s_theta.asin();
    // cos(theta) ~ 0 within ~1e-8 of the pole
    if 1.0 - s_theta.abs() < 1e-15 || (1.0 - s_theta * s_theta).sqrt() < 1e-8 {
        let varphi = 0.0;
        let phi = if s_theta > 0.0 {
            f64::atan2(m[1][0], m[1][1])
        } else {
            f64::atan2(-m[1][0], m[1][1])
        };
        (EulerAngles::new(phi, theta, varphi), true)
    } else {
        let phi = f64::atan2(-m[1][2], m[2][2]);
        let varphi = f64::atan2(-m[0][1], m[0][0]);
        (EulerAngles::new(phi, theta, varphi), false)
    }
}

pub fn to_euler(r: &Rotation) -> EulerAngles {
    to_euler_checked(r).0
}

/// Draw a perturbation with each of the six parameters independently
/// uniform in its bound. Deterministic given the rng state.
pub fn sample_perturbation<R: Rng + ?Sized>(p: &NoiseParams, rng: &mut R) -> Transform {
    let mut draw = |bound: f64| -> f64 {
        if bound > 0.0 {
            rng.gen_range(-bound..=bound)
        } else {
            0.0
        }
    };
    let e = EulerAngles::new(draw(p.alpha), draw(p.alpha), draw(p.alpha));
    let t = Vec3::new(draw(p.beta_t), draw(p.beta_t), draw(p.beta_t));
    Transform::new(from_euler(e), t)
}

/// Noise acts in the end-effector frame: T~ = T * eps.
pub fn perturb_pose(t: &Transform, eps: &Transform) -> Transform {
    compose(t, eps)
}

/// Corrective relative action a~ = eps^-1 * a. Satisfies
/// (T * eps) * a~ = T * a, so the desired world pose is preserved.
pub fn corrective_action(eps: &Transform, a: &Transform) -> Transform {
    compose(&inverse(eps), a)
}

/// Camera pose from end-effector pose and the fixed hand-eye transform:
/// wTc = wTe * eTc.
pub fn camera_from_ee(w_t_e: &Transform, e_t_c: &Transform) -> Transform {
    compose(w_t_e, e_t_c)
}

/// Validate the Transform invariants; used by tests and file loaders.
pub fn check_transform(t: &Transform) -> Result<()> {
    if t.rotation.ortho_error() > 1e-6 || (t.rotation.det() - 1.0).abs() > 1e-6 {
        return Err(CoreError::Parse {
            path: String::new(),
            msg: "rotation is not orthonormal with det +1".into(),
        });
    }
    Ok(())
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn compose_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            assert!(compose(&Transform::identity(), &t).max_abs_diff(&t) < 1e-15);
            let should_be_id = compose(&t, &inverse(&t));
            assert!(should_be_id.max_abs_diff(&Transform::identity()) < 1e-9);
            assert!(inverse(&inverse(&t)).max_abs_diff(&t) < 1e-12);
        }
    }

    #[test]
    fn compose_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let got = mat4_of(&compose(&a, &b));
            let want = mat4_mul(&mat4_of(&a), &mat4_of(&b));
            assert!(mat4_close(&got, &want, 1e-12));
        }
    }

    #[test]
    fn inverse_of_pure_translation() {
        let t = Transform::from_translation(Vec3::new(0.0, 0.0, 0.1));
        let inv = inverse(&t);
        assert!(inv.max_abs_diff(&Transform::from_translation(Vec3::new(0.0, 0.0, -0.1))) < 1e-15);
        assert!(inverse(&Transform::identity()).max_abs_diff(&Transform::identity()) < 1e-15);
    }

    #[test]
    fn euler_zero_is_identity_and_quarter_turn_maps_y_to_z() {
        let r = from_euler(EulerAngles::new(0.0, 0.0, 0.0));
        assert!(r.angle_to(&Rotation::identity()) < 1e-12);

        // axis-angle oracle: Rx(pi/2) sends +y to +z
        let r = from_euler(EulerAngles::new(std::f64::consts::FRAC_PI_2, 0.0, 0.0));
        let oracle = Rotation::from_axis_angle(Vec3::new(1.0, 0.0, 0.0), std::f64::consts::FRAC_PI_2);
        assert!(r.angle_to(&oracle) < 1e-12);
        let v = r.apply(Vec3::new(0.0, 1.0, 0.0));
        assert!((v - Vec3::new(0.0, 0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn euler_round_trip_away_from_gimbal_lock() {
        let e = EulerAngles::new(0.1, -0.2, 0.3);
        let (back, gimbal) = to_euler_checked(&from_euler(e));
        assert!(!gimbal);
        assert!((back.phi - 0.1).abs() < 1e-9);
        assert!((back.theta + 0.2).abs() < 1e-9);
        assert!((back.varphi - 0.3).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..500 {
            let e = EulerAngles::new(
                rng.gen_range(-3.1..3.1),
                rng.gen_range(-1.45..1.45),
                rng.gen_range(-3.1..3.1),
            );
            let r = from_euler(e);
            let (b, gimbal) = to_euler_checked(&r);
            assert!(!gimbal);
            let r2 = from_euler(b);
            assert!(r.angle_to(&r2) < 1e-9, "round trip failed for {e:?}");
        }
    }

    #[test]
    fn euler_gimbal_lock_returns_canonical_representative() {
        let e = EulerAngles::new(0.4, std::f64::consts::FRAC_PI_2, 0.7);
        let r = from_euler(e);
        let (b, gimbal) = to_euler_checked(&r);
        assert!(gimbal);
        assert_eq!(b.varphi, 0.0);
        // the representative still reproduces the rotation
        assert!(from_euler(b).angle_to(&r) < 1e-9);
    }

    #[test]
    fn perturbation_zero_params_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..10 {
            let eps = sample_perturbation(&NoiseParams::new(0.0, 0.0), &mut rng);
            assert!(eps.max_abs_diff(&Transform::identity()) < 1e-15);
        }
    }

    #[test]
    fn perturbation_bounded_and_deterministic() {
        let p = NoiseParams::new(0.2, 0.003);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..2000 {
            let eps = sample_perturbation(&p, &mut rng);
            let e = to_euler(&eps.rotation);
            for a in e.to_array() {
                assert!(a.abs() <= 0.2 + 1e-12);
            }
            for c in eps.translation.to_array() {
                assert!(c.abs() <= 0.003 + 1e-15);
            }
        }
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..50 {
            let a = sample_perturbation(&p, &mut r1);
            let b = sample_perturbation(&p, &mut r2);
            assert_eq!(a.to_row_major(), b.to_row_major());
        }
    }

    #[test]
    fn perturbation_translation_mean_is_centered() {
        let p = NoiseParams::new(0.1, 0.003);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let n = 100_000;
        let mut sum = Vec3::ZERO;
        for _ in 0..n {
            sum += sample_perturbation(&p, &mut rng).translation;
        }
        let mean = sum / n as f64;
        // each component: uniform(-b,b) has sd b/sqrt(3); allow 3 standard errors
        let bound = 3.0 * p.beta_t / (3.0 * n as f64).sqrt();
        for c in mean.to_array() {
            assert!(c.abs() < bound, "mean component {c} exceeds {bound}");
        }
    }

    #[test]
    fn perturb_and_corrective_action_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let id = Transform::identity();
        for _ in 0..200 {
            let t = random_transform(&mut rng);
            let eps = random_transform(&mut rng);
            let a = random_transform(&mut rng);

            assert!(perturb_pose(&t, &id).max_abs_diff(&t) < 1e-15);
            assert!(perturb_pose(&id, &eps).max_abs_diff(&eps) < 1e-15);
            let want = mat4_mul(&mat4_of(&t), &mat4_of(&eps));
            assert!(mat4_close(&mat4_of(&perturb_pose(&t, &eps)), &want, 1e-12));

            assert!(corrective_action(&id, &a).max_abs_diff(&a) < 1e-15);
            assert!(corrective_action(&eps, &id).max_abs_diff(&inverse(&eps)) < 1e-12);

            // the key contract: (T eps)(eps^-1 a) = T a
            let lhs = compose(&perturb_pose(&t, &eps), &corrective_action(&eps, &a));
            let rhs = compose(&t, &a);
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);
        }
    }

    #[test]
    fn camera_from_ee_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        let id = Transform::identity();
        for _ in 0..100 {
            let w_t_e = random_transform(&mut rng);
            let e_t_c = random_transform(&mut rng);
            assert!(camera_from_ee(&w_t_e, &id).max_abs_diff(&w_t_e) < 1e-15);
            assert!(camera_from_ee(&id, &e_t_c).max_abs_diff(&e_t_c) < 1e-15);
            let want = mat4_mul(&mat4_of(&w_t_e), &mat4_of(&e_t_c));
            assert!(mat4_close(&mat4_of(&camera_from_ee(&w_t_e, &e_t_c)), &want, 1e-12));
        }
    }

    #[test]
    fn compose_associativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..200 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let c = random_transform(&mut rng);
            let left = compose(&compose(&a, &b), &c);
            let right = compose(&a, &compose(&b, &c));
            assert!(left.max_abs_diff(&right) < 1e-12);
        }
    }

    #[test]
    fn long_chain_stays_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut acc = Transform::identity();
        for _ in 0..20_000 {
            acc = compose(&acc, &random_transform(&mut rng));
        }
        assert!(acc.rotation.ortho_error() < 1e-7);
        assert!((acc.rotation.det() - 1.0).abs() < 1e-7);
    }

    #[test]
    fn row_major_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let t = random_transform(&mut rng);
        let v = t.to_row_major();
        assert_eq!(Transform::from_row_major(&v).to_row_major(), v);
    }
}
