//! Rigid-body poses, twists, and tangent-space Gaussians.
//!
//! Conventions used throughout the crate:
//!
//! * A [`Pose`] is a rotation matrix plus a translation vector, acting on
//!   points as `p' = R p + t`.
//! * A [`Twist`] is a 6-vector `[rho; omega]`: translational part first
//!   (indices 0..3), rotational part second (indices 3..6).
//! * `exp` maps a twist to a pose with `R = Exp(omega)`, `t = V(omega) rho`
//!   where `V` is the left Jacobian of SO(3). `log` is its inverse on the
//!   canonical branch (rotation angle below pi).
//! * Local (body-frame) parametrization around a base pose `B`:
//!   `local_exp(B, h) = B * exp(h)` and `local_log(B, H) = log(B^-1 H)`.
//!
//! Tangent Gaussians are isotropic normals in the local coordinates of their
//! mean pose; one sigma covers both meters and radians. Their score (gradient
//! of the log-density with respect to local coordinates at the evaluation
//! pose) has the closed form `-J_r(v)^-T v / sigma^2` with `v = local_log`,
//! where `J_r` is the right Jacobian of SE(3). The [`dual`] module carries an
//! independent forward-mode differentiation path used to cross-check that
//! formula in tests and in `selftest`.

pub mod dual;

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// Twist coordinates `[rho; omega]`, translation first.
pub type Twist = Vector6<f64>;

/// Rotation angle (radians) above which the canonical log branch is rejected.
/// Expressed through the trace: `trace(R) <= -1 + TRACE_GUARD` means the
/// rotation is within about 1e-3 rad of pi and axis extraction degrades.
pub const TRACE_GUARD: f64 = 1e-6;

/// Below this angle the trigonometric coefficient functions switch to their
/// Taylor expansions.
const SMALL_ANGLE: f64 = 1e-4;

/// Rigid transform in SE(3).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    /// `self * other`, applying `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose { rotation: rt, translation: -(rt * self.translation) }
    }

    /// Applies the transform to a point.
    pub fn act(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Applies the inverse transform to a point without forming it.
    pub fn inverse_act(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Row-major `[r00..r22, t0, t1, t2]`, the on-disk layout.
    pub fn to_floats(&self) -> [f64; 12] {
        let r = &self.rotation;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)],
            r[(1, 0)], r[(1, 1)], r[(1, 2)],
            r[(2, 0)], r[(2, 1)], r[(2, 2)],
            self.translation.x, self.translation.y, self.translation.z,
        ]
    }

    pub fn from_floats(f: &[f64; 12]) -> Pose {
        Pose {
            rotation: Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]),
            translation: Vector3::new(f[9], f[10], f[11]),
        }
    }

    /// Geodesic rotation angle to `other`, in radians.
    pub fn rotation_distance(&self, other: &Pose) -> f64 {
        rotation_angle(&(self.rotation.transpose() * other.rotation))
    }

    pub fn translation_distance(&self, other: &Pose) -> f64 {
        (self.translation - other.translation).norm()
    }
}

pub fn skew(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Rotation angle of `R` via the trace, clamped against rounding.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    (((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0)).acos()
}

/// `A = sin t / t`, `B = (1 - cos t) / t^2`, `C = (t - sin t) / t^3` with
/// Taylor fallbacks near zero. These drive Rodrigues and the V matrix.
fn abc_coeffs(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 - t2 / 6.0 + t2 * t2 / 120.0,
            0.5 - t2 / 24.0 + t2 * t2 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0,
        )
    } else {
        let s = theta.sin();
        let c = theta.cos();
        (s / theta, (1.0 - c) / (theta * theta), (theta - s) / (theta * theta * theta))
    }
}

/// Exponential map of SO(3) (Rodrigues).
pub fn exp_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (a, b, _) = abc_coeffs(theta);
    let k = skew(omega);
    Matrix3::identity() + k * a + k * k * b
}

/// Left Jacobian of SO(3), also the V matrix coupling rotation into the
/// SE(3) translation.
pub fn left_jacobian_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let (_, b, c) = abc_coeffs(theta);
    let k = skew(omega);
    Matrix3::identity() + k * b + k * k * c
}

/// Inverse of the left Jacobian of SO(3). Valid on the canonical branch.
pub fn left_jacobian_so3_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let k = skew(omega);
    let d = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        // (1 - (theta/2) cot(theta/2)) / theta^2
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * d
}

/// Canonical log of SO(3). Fails within ~1e-3 rad of a half-turn, where the
/// axis is no longer recoverable from the skew part at useful precision.
pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let tr = r.trace();
    if tr <= -1.0 + TRACE_GUARD {
        return Err(Error::NearPiRotation { trace: tr });
    }
    let theta = (((tr - 1.0) * 0.5).clamp(-1.0, 1.0)).acos();
    let vee = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    );
    let factor = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        0.5 * (1.0 + t2 / 12.0 + 7.0 * t2 * t2 / 720.0)
    } else {
        0.5 * theta / theta.sin()
    };
    Ok(vee * factor)
}

/// Exponential map of SE(3).
pub fn exp_se3(v: &Twist) -> Pose {
    let rho = Vector3::new(v[0], v[1], v[2]);
    let omega = Vector3::new(v[3], v[4], v[5]);
    Pose { rotation: exp_so3(&omega), translation: left_jacobian_so3(&omega) * rho }
}

/// Canonical log of SE(3).
pub fn log_se3(h: &Pose) -> Result<Twist> {
    let omega = log_so3(&h.rotation)?;
    let rho = left_jacobian_so3_inv(&omega) * h.translation;
    let mut v = Twist::zeros();
    v.fixed_rows_mut::<3>(0).copy_from(&rho);
    v.fixed_rows_mut::<3>(3).copy_from(&omega);
    Ok(v)
}

/// `base * exp(h)`: perturbs `base` by local coordinates `h`.
pub fn local_exp(base: &Pose, h: &Twist) -> Pose {
    base.compose(&exp_se3(h))
}

/// Local coordinates of `target` as seen from `base`: `log(base^-1 target)`.
pub fn local_log(base: &Pose, target: &Pose) -> Result<Twist> {
    log_se3(&base.inverse().compose(target))
}

/// Q block of the left Jacobian of SE(3) (Barfoot's closed form), `[rho; omega]`
/// ordering. Couples translation into the rotational rows.
fn se3_q_matrix(rho: &Vector3<f64>, omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let cp = skew(rho);
    let cw = skew(omega);
    // Series checks: u = (1 - t^2/2 - cos t)/t^4 -> -1/24, and
    // w = (t - sin t - t^3/6)/t^5 -> -1/120, so m2 -> 1/24, m3 -> 1/120.
    let (m1, m2, m3) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (
            1.0 / 6.0 - t2 / 120.0,
            1.0 / 24.0 - t2 / 720.0,
            1.0 / 120.0 - t2 / 2520.0,
        )
    } else {
        let s = theta.sin();
        let c = theta.cos();
        let t3 = theta * theta * theta;
        let t4 = t3 * theta;
        let t5 = t4 * theta;
        let u = (1.0 - 0.5 * theta * theta - c) / t4;
        let w = (theta - s - t3 / 6.0) / t5;
        ((theta - s) / t3, -u, -0.5 * (u - 3.0 * w))
    };
    let cwcp = cw * cp;
    let cpcw = cp * cw;
    let cwcpcw = cwcp * cw;
    cp * 0.5
        + (cwcp + cpcw + cwcpcw) * m1
        + (cw * cwcp + cpcw * cw - cwcpcw * 3.0) * m2
        + (cwcpcw * cw + cw * cwcpcw) * m3
}

/// Left Jacobian of SE(3): `exp(v + d) ~ exp(J_l(v) d) * exp(v)`.
pub fn se3_left_jacobian(v: &Twist) -> Matrix6<f64> {
    let rho = Vector3::new(v[0], v[1], v[2]);
    let omega = Vector3::new(v[3], v[4], v[5]);
    let j = left_jacobian_so3(&omega);
    let q = se3_q_matrix(&rho, &omega);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out
}

/// Right Jacobian of SE(3): `exp(v + d) ~ exp(v) * exp(J_r(v) d)`.
pub fn se3_right_jacobian(v: &Twist) -> Matrix6<f64> {
    se3_left_jacobian(&(-v))
}

/// Projects a drifted rotation matrix back onto SO(3) via polar
/// decomposition (nearest orthogonal matrix, determinant forced positive).
pub fn re_orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd of 3x3 requested with u");
    let vt = svd.v_t.expect("svd of 3x3 requested with v_t");
    let mut m = u * vt;
    if m.determinant() < 0.0 {
        // Flip the axis of least singular value to stay in SO(3).
        let mut u2 = u;
        u2.column_mut(2).neg_mut();
        m = u2 * vt;
    }
    m
}

/// Isotropic Gaussian in the tangent space at `mean`. One sigma for all six
/// coordinates, meters and radians alike.
#[derive(Clone, Copy, Debug)]
pub struct TangentGaussian {
    pub mean: Pose,
    pub sigma: f64,
}

impl TangentGaussian {
    pub fn new(mean: Pose, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::Domain { what: format!("sigma must be positive, got {sigma}") });
        }
        Ok(TangentGaussian { mean, sigma })
    }

    /// Draws `mean * exp(v)` with `v ~ N(0, sigma^2 I_6)`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Pose {
        local_exp(&self.mean, &sample_tangent(rng, self.sigma))
    }

    /// Unnormalized log-density in the local coordinates of `mean`:
    /// `-||local_log(mean, h)||^2 / (2 sigma^2)`. The normalizing constant is
    /// omitted; only differences and gradients of this quantity are used.
    pub fn log_density(&self, h: &Pose) -> Result<f64> {
        let v = local_log(&self.mean, h)?;
        Ok(-0.5 * v.norm_squared() / (self.sigma * self.sigma))
    }

    /// Gradient of [`Self::log_density`] with respect to the local
    /// coordinates of the evaluation pose `h`:
    /// `-J_r(v)^-T v / sigma^2` with `v = local_log(mean, h)`.
    pub fn score(&self, h: &Pose) -> Result<Twist> {
        let v = local_log(&self.mean, h)?;
        let jr_t = se3_right_jacobian(&v).transpose();
        let x = jr_t
            .lu()
            .solve(&v)
            .ok_or_else(|| Error::Domain { what: "singular right Jacobian in score".into() })?;
        Ok(-x / (self.sigma * self.sigma))
    }
}

/// `v ~ N(0, sigma^2 I_6)`.
pub fn sample_tangent<R: Rng>(rng: &mut R, sigma: f64) -> Twist {
    let mut v = Twist::zeros();
    for i in 0..6 {
        let n: f64 = rng.sample(StandardNormal);
        v[i] = n * sigma;
    }
    v
}

/// Uniform random pose: rotation uniform on SO(3) (Shoemake quaternion
/// method), translation uniform in the axis-aligned box `[lo, hi]`.
pub fn random_uniform_pose<R: Rng>(rng: &mut R, lo: &Vector3<f64>, hi: &Vector3<f64>) -> Pose {
    let u1: f64 = rng.gen();
    let u2: f64 = rng.gen();
    let u3: f64 = rng.gen();
    let tau = std::f64::consts::TAU;
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        ((1.0 - u1).sqrt()) * (tau * u2).sin(),
        ((1.0 - u1).sqrt()) * (tau * u2).cos(),
        (u1.sqrt()) * (tau * u3).sin(),
        (u1.sqrt()) * (tau * u3).cos(),
    ));
    let mut t = Vector3::zeros();
    for i in 0..3 {
        let u: f64 = rng.gen();
        t[i] = lo[i] + u * (hi[i] - lo[i]);
    }
    Pose { rotation: q.to_rotation_matrix().into_inner(), translation: t }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Matrix exponential of the 4x4 twist matrix by scaling and squaring,
    /// an implementation-independent oracle for `exp_se3`.
    fn expm4_oracle(v: &Twist) -> Pose {
        let mut m = nalgebra::Matrix4::<f64>::zeros();
        let k = skew(&Vector3::new(v[3], v[4], v[5]));
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&k);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&Vector3::new(v[0], v[1], v[2]));
        let mut s = 0;
        let mut norm = m.norm();
        while norm > 0.25 {
            norm *= 0.5;
            s += 1;
        }
        let scaled = m / (2f64.powi(s));
        let mut sum = nalgebra::Matrix4::identity();
        let mut term = nalgebra::Matrix4::identity();
        for i in 1..24 {
            term = term * scaled / (i as f64);
            sum += term;
        }
        for _ in 0..s {
            sum = sum * sum;
        }
        Pose {
            rotation: sum.fixed_view::<3, 3>(0, 0).into_owned(),
            translation: sum.fixed_view::<3, 1>(0, 3).into_owned().column(0).into(),
        }
    }

    fn random_twist(rng: &mut ChaCha8Rng, max_rot: f64, max_trans: f64) -> Twist {
        loop {
            let mut v = Twist::zeros();
            for i in 0..3 {
                v[i] = (rng.gen::<f64>() * 2.0 - 1.0) * max_trans;
            }
            for i in 3..6 {
                v[i] = (rng.gen::<f64>() * 2.0 - 1.0) * max_rot;
            }
            if Vector3::new(v[3], v[4], v[5]).norm() < max_rot {
                return v;
            }
        }
    }

    #[test]
    fn exp_matches_quaternion_and_expm_oracles() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..500 {
            let v = random_twist(&mut rng, 3.0, 2.0);
            let p = exp_se3(&v);
            let omega = Vector3::new(v[3], v[4], v[5]);
            let q = UnitQuaternion::from_scaled_axis(omega).to_rotation_matrix();
            assert!((p.rotation - q.into_inner()).norm() < 1e-12);
            let o = expm4_oracle(&v);
            assert!((p.rotation - o.rotation).norm() < 1e-11);
            assert!((p.translation - o.translation).norm() < 1e-11);
        }
    }

    #[test]
    fn frozen_quarter_turn_translation() {
        // omega = (0, 0, pi/2), rho = (1, 0, 0): t = V rho = (2/pi, 2/pi, 0).
        let mut v = Twist::zeros();
        v[0] = 1.0;
        v[5] = std::f64::consts::FRAC_PI_2;
        let p = exp_se3(&v);
        let e = 2.0 / std::f64::consts::PI;
        assert_abs_diff_eq!(p.translation.x, e, epsilon = 1e-14);
        assert_abs_diff_eq!(p.translation.y, e, epsilon = 1e-14);
        assert_abs_diff_eq!(p.translation.z, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p.rotation[(1, 0)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn log_rotation_matches_quaternion_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..500 {
            let v = random_twist(&mut rng, std::f64::consts::PI - 0.1, 1.0);
            let p = exp_se3(&v);
            let w = log_so3(&p.rotation).unwrap();
            let qw = UnitQuaternion::from_matrix(&p.rotation).scaled_axis();
            assert!((w - qw).norm() < 1e-9, "w={w:?} qw={qw:?}");
        }
    }

    #[test]
    fn round_trip_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..2000 {
            let v = random_twist(&mut rng, std::f64::consts::PI - 0.1, 2.0);
            let back = log_se3(&exp_se3(&v)).unwrap();
            assert!((v - back).norm() < 1e-9, "twist round trip {:?}", (v - back).norm());
            let p = exp_se3(&v);
            let p2 = exp_se3(&log_se3(&p).unwrap());
            assert!((p.rotation - p2.rotation).norm() < 1e-9);
            assert!((p.translation - p2.translation).norm() < 1e-9);
        }
    }

    #[test]
    fn local_pair_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        for _ in 0..500 {
            let b = random_uniform_pose(
                &mut rng,
                &Vector3::new(-1.0, -1.0, -1.0),
                &Vector3::new(1.0, 1.0, 1.0),
            );
            let h = random_twist(&mut rng, 2.5, 1.5);
            let back = local_log(&b, &local_exp(&b, &h)).unwrap();
            assert!((h - back).norm() < 1e-9);
        }
    }

    #[test]
    fn frozen_local_log_example() {
        // Base: quarter turn about z at the origin. Target: base shifted by
        // world x. In base coordinates that offset is -y.
        let b = Pose::new(exp_so3(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2)), Vector3::zeros());
        let h = Pose::new(b.rotation, Vector3::new(1.0, 0.0, 0.0));
        let v = local_log(&b, &h).unwrap();
        assert_abs_diff_eq!(v[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[2], 0.0, epsilon = 1e-12);
        assert!(v.fixed_rows::<3>(3).norm() < 1e-12);
    }

    #[test]
    fn near_pi_guard_fires() {
        let r = exp_so3(&Vector3::new(std::f64::consts::PI, 0.0, 0.0));
        assert!(matches!(log_so3(&r), Err(Error::NearPiRotation { .. })));
        let r2 = exp_so3(&Vector3::new(std::f64::consts::PI - 1e-2, 0.0, 0.0));
        assert!(log_so3(&r2).is_ok());
    }

    #[test]
    fn left_jacobian_matches_finite_differences() {
        // exp(v + d) ~ exp(J_l d) exp(v): recover columns of J_l numerically.
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..50 {
            let v = random_twist(&mut rng, 2.0, 1.5);
            let jl = se3_left_jacobian(&v);
            let base = exp_se3(&v);
            let eps = 1e-6;
            for i in 0..6 {
                let mut vp = v;
                vp[i] += eps;
                let mut vm = v;
                vm[i] -= eps;
                let dp = log_se3(&exp_se3(&vp).compose(&base.inverse())).unwrap();
                let dm = log_se3(&exp_se3(&vm).compose(&base.inverse())).unwrap();
                let col = (dp - dm) / (2.0 * eps);
                assert!(
                    (col - jl.column(i)).norm() < 1e-6,
                    "J_l column {i} mismatch: {:?}",
                    (col - jl.column(i)).norm()
                );
            }
        }
    }

    #[test]
    fn score_pure_translation_closed_form() {
        let sigma = 0.05;
        let mean = Pose::identity();
        let g = TangentGaussian::new(mean, sigma).unwrap();
        let t = Vector3::new(0.01, -0.02, 0.03);
        let h = Pose::new(Matrix3::identity(), t);
        let s = g.score(&h).unwrap();
        let expect = -t / (sigma * sigma);
        assert!((Vector3::new(s[0], s[1], s[2]) - expect).norm() < 1e-10);
        assert!(s.fixed_rows::<3>(3).norm() < 1e-10);
    }

    fn fd_score(g: &TangentGaussian, h: &Pose, eps: f64) -> Twist {
        let mut out = Twist::zeros();
        for i in 0..6 {
            let mut hp = Twist::zeros();
            hp[i] = eps;
            let mut hm = Twist::zeros();
            hm[i] = -eps;
            let fp = g.log_density(&local_exp(h, &hp)).unwrap();
            let fm = g.log_density(&local_exp(h, &hm)).unwrap();
            out[i] = (fp - fm) / (2.0 * eps);
        }
        out
    }

    #[test]
    fn score_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for _ in 0..200 {
            let mean = random_uniform_pose(
                &mut rng,
                &Vector3::new(-0.5, -0.5, -0.5),
                &Vector3::new(0.5, 0.5, 0.5),
            );
            let sigma = 0.02 + 0.08 * rng.gen::<f64>();
            let g = TangentGaussian::new(mean, sigma).unwrap();
            let h = g.sample(&mut rng);
            let s = g.score(&h).unwrap();
            let fd = fd_score(&g, &h, 1e-6);
            let rel = (s - fd).norm() / s.norm().max(1e-9);
            assert!(rel < 1e-4, "rel err {rel}");
        }
    }

    #[test]
    fn score_matches_dual_differentiation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let mean = random_uniform_pose(
                &mut rng,
                &Vector3::new(-0.5, -0.5, -0.5),
                &Vector3::new(0.5, 0.5, 0.5),
            );
            let sigma = 0.02 + 0.08 * rng.gen::<f64>();
            let g = TangentGaussian::new(mean, sigma).unwrap();
            let h = g.sample(&mut rng);
            let s = g.score(&h).unwrap();
            let d = dual::score_via_dual(&mean, &h, sigma);
            let rel = (s - d).norm() / s.norm().max(1e-9);
            assert!(rel < 1e-9, "rel err vs dual {rel}");
        }
    }

    #[test]
    fn score_is_left_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(18);
        for _ in 0..100 {
            let lo = Vector3::new(-0.5, -0.5, -0.5);
            let hi = Vector3::new(0.5, 0.5, 0.5);
            let mean = random_uniform_pose(&mut rng, &lo, &hi);
            let gmove = random_uniform_pose(&mut rng, &lo, &hi);
            let g = TangentGaussian::new(mean, 0.05).unwrap();
            let h = g.sample(&mut rng);
            let s = g.score(&h).unwrap();
            let g2 = TangentGaussian::new(gmove.compose(&mean), 0.05).unwrap();
            let s2 = g2.score(&gmove.compose(&h)).unwrap();
            assert!((s - s2).norm() < 1e-9 * s.norm().max(1.0));
        }
    }

    #[test]
    fn tangent_sampling_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let sigma = 0.07;
        let n = 100_000;
        let mut mean = Twist::zeros();
        let mut var = Twist::zeros();
        for _ in 0..n {
            let v = sample_tangent(&mut rng, sigma);
            mean += v;
            for i in 0..6 {
                var[i] += v[i] * v[i];
            }
        }
        mean /= n as f64;
        var /= n as f64;
        for i in 0..6 {
            // Standard error of the mean is sigma/sqrt(n) ~ 2.2e-4.
            assert!(mean[i].abs() < 1.5e-3, "mean[{i}] = {}", mean[i]);
            assert!((var[i] - sigma * sigma).abs() < 1e-4, "var[{i}] = {}", var[i]);
        }
    }

    #[test]
    fn gaussian_mean_recovery() {
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mean = random_uniform_pose(
            &mut rng,
            &Vector3::new(-0.2, -0.2, -0.2),
            &Vector3::new(0.2, 0.2, 0.2),
        );
        let g = TangentGaussian::new(mean, 0.05).unwrap();
        let mut acc = Twist::zeros();
        let n = 20_000;
        for _ in 0..n {
            let h = g.sample(&mut rng);
            acc += local_log(&mean, &h).unwrap();
        }
        acc /= n as f64;
        assert!(acc.norm() < 2e-3, "residual {:?}", acc.norm());
    }

    #[test]
    fn zero_sigma_rejected() {
        assert!(TangentGaussian::new(Pose::identity(), 0.0).is_err());
        assert!(TangentGaussian::new(Pose::identity(), -1.0).is_err());
        assert!(TangentGaussian::new(Pose::identity(), f64::NAN).is_err());
    }

    #[test]
    fn uniform_pose_statistics() {
        // Chi-square over octants of a rotated unit vector (uniform rotation
        // sends x-hat to the uniform sphere) and over translation deciles.
        // Critical values at p = 0.01: chi2(7) = 18.475, chi2(9) = 21.666.
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 40_000;
        let mut oct = [0usize; 8];
        let mut dec = [[0usize; 10]; 3];
        let lo = Vector3::new(0.0, 0.0, 0.0);
        let hi = Vector3::new(0.3, 0.3, 0.3);
        for _ in 0..n {
            let p = random_uniform_pose(&mut rng, &lo, &hi);
            let v = p.rotation * Vector3::x();
            let idx = ((v.x > 0.0) as usize) | (((v.y > 0.0) as usize) << 1) | (((v.z > 0.0) as usize) << 2);
            oct[idx] += 1;
            for a in 0..3 {
                let b = ((p.translation[a] / 0.3) * 10.0).floor().clamp(0.0, 9.0) as usize;
                dec[a][b] += 1;
            }
        }
        let e8 = n as f64 / 8.0;
        let chi8: f64 = oct.iter().map(|&c| (c as f64 - e8).powi(2) / e8).sum();
        assert!(chi8 < 18.475, "octant chi2 {chi8}");
        let e10 = n as f64 / 10.0;
        for a in 0..3 {
            let chi10: f64 = dec[a].iter().map(|&c| (c as f64 - e10).powi(2) / e10).sum();
            assert!(chi10 < 21.666, "axis {a} chi2 {chi10}");
        }
        // Determinism under a fixed seed.
        let mut r1 = ChaCha8Rng::seed_from_u64(99);
        let mut r2 = ChaCha8Rng::seed_from_u64(99);
        let a = random_uniform_pose(&mut r1, &lo, &hi);
        let b = random_uniform_pose(&mut r2, &lo, &hi);
        assert_eq!(a.to_floats(), b.to_floats());
    }

    #[test]
    fn compose_inverse_act() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..200 {
            let lo = Vector3::new(-1.0, -1.0, -1.0);
            let hi = Vector3::new(1.0, 1.0, 1.0);
            let a = random_uniform_pose(&mut rng, &lo, &hi);
            let b = random_uniform_pose(&mut rng, &lo, &hi);
            let ab = a.compose(&b);
            let inv = ab.inverse();
            let ident = ab.compose(&inv);
            assert!((ident.rotation - Matrix3::identity()).norm() < 1e-12);
            assert!(ident.translation.norm() < 1e-12);
            let inv2 = b.inverse().compose(&a.inverse());
            assert!((inv.rotation - inv2.rotation).norm() < 1e-12);
            assert!((inv.translation - inv2.translation).norm() < 1e-12);
            let p = Vector3::new(rng.gen(), rng.gen(), rng.gen());
            assert!((ab.act(&p) - a.act(&b.act(&p))).norm() < 1e-12);
        }
    }

    #[test]
    fn float_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let p = random_uniform_pose(
            &mut rng,
            &Vector3::new(-1.0, -1.0, -1.0),
            &Vector3::new(1.0, 1.0, 1.0),
        );
        let f = p.to_floats();
        let q = Pose::from_floats(&f);
        assert_eq!(p.rotation, q.rotation);
        assert_eq!(p.translation, q.translation);
    }

    #[test]
    fn reorthonormalize_projects() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..100 {
            let p = random_uniform_pose(
                &mut rng,
                &Vector3::zeros(),
                &Vector3::new(1.0, 1.0, 1.0),
            );
            let mut drifted = p.rotation;
            for i in 0..3 {
                for j in 0..3 {
                    drifted[(i, j)] += (rng.gen::<f64>() - 0.5) * 1e-3;
                }
            }
            let r = re_orthonormalize(&drifted);
            assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-12);
            assert!((r.determinant() - 1.0).abs() < 1e-12);
            assert!((r - p.rotation).norm() < 1e-2);
        }
    }
}
