//! Forward-mode differentiation of the tangent-Gaussian log-density.
//!
//! This is a deliberately separate implementation of the exp/log chain over
//! dual numbers. It shares no code with the closed-form score in the parent
//! module, so agreement between the two is a meaningful check rather than a
//! tautology. Used by unit tests and the `selftest` command.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::{Pose, Twist};

/// Dual number `re + eps * d` with `d^2 = 0`.
#[derive(Clone, Copy, Debug)]
pub struct Dual {
    pub re: f64,
    pub eps: f64,
}

impl Dual {
    pub fn c(re: f64) -> Dual {
        Dual { re, eps: 0.0 }
    }

    pub fn var(re: f64) -> Dual {
        Dual { re, eps: 1.0 }
    }

    fn sin(self) -> Dual {
        Dual { re: self.re.sin(), eps: self.eps * self.re.cos() }
    }

    fn cos(self) -> Dual {
        Dual { re: self.re.cos(), eps: -self.eps * self.re.sin() }
    }

    fn sqrt(self) -> Dual {
        let r = self.re.sqrt();
        Dual { re: r, eps: self.eps * 0.5 / r }
    }

    fn atan2(self, x: Dual) -> Dual {
        let denom = self.re * self.re + x.re * x.re;
        Dual {
            re: self.re.atan2(x.re),
            eps: (x.re * self.eps - self.re * x.eps) / denom,
        }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual { re: self.re + o.re, eps: self.eps + o.eps }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual { re: self.re - o.re, eps: self.eps - o.eps }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual { re: self.re * o.re, eps: self.re * o.eps + self.eps * o.re }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        Dual {
            re: self.re / o.re,
            eps: (self.eps * o.re - self.re * o.eps) / (o.re * o.re),
        }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        Dual { re: -self.re, eps: -self.eps }
    }
}

type V3 = [Dual; 3];
type M3 = [[Dual; 3]; 3];

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let z = Dual::c(0.0);
    let mut out = [[z; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = z;
            for k in 0..3 {
                s = s + a[i][k] * b[k][j];
            }
            out[i][j] = s;
        }
    }
    out
}

fn mat_vec(a: &M3, v: &V3) -> V3 {
    let z = Dual::c(0.0);
    let mut out = [z; 3];
    for i in 0..3 {
        out[i] = a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2];
    }
    out
}

fn skew_d(w: &V3) -> M3 {
    let z = Dual::c(0.0);
    [
        [z, -w[2], w[1]],
        [w[2], z, -w[0]],
        [-w[1], w[0], z],
    ]
}

fn identity_d() -> M3 {
    let z = Dual::c(0.0);
    let o = Dual::c(1.0);
    [[o, z, z], [z, o, z], [z, z, o]]
}

fn mat_add3(a: &M3, b: &M3, c: &M3) -> M3 {
    let mut out = *a;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][j] + b[i][j] + c[i][j];
        }
    }
    out
}

fn scale(m: &M3, s: Dual) -> M3 {
    let mut out = *m;
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[i][j] * s;
        }
    }
    out
}

/// Rodrigues over duals, with series coefficients below a squared-angle cut.
fn exp_so3_d(w: &V3) -> M3 {
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b) = if t2.re < 1e-8 {
        let one = Dual::c(1.0);
        (
            one - t2 / Dual::c(6.0),
            Dual::c(0.5) - t2 / Dual::c(24.0),
        )
    } else {
        let t = t2.sqrt();
        (t.sin() / t, (Dual::c(1.0) - t.cos()) / t2)
    };
    let k = skew_d(w);
    let k2 = mat_mul(&k, &k);
    mat_add3(&identity_d(), &scale(&k, a), &scale(&k2, b))
}

fn left_jacobian_d(w: &V3) -> M3 {
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (b, c) = if t2.re < 1e-8 {
        (
            Dual::c(0.5) - t2 / Dual::c(24.0),
            Dual::c(1.0 / 6.0) - t2 / Dual::c(120.0),
        )
    } else {
        let t = t2.sqrt();
        let t3 = t2 * t;
        ((Dual::c(1.0) - t.cos()) / t2, (t - t.sin()) / t3)
    };
    let k = skew_d(w);
    let k2 = mat_mul(&k, &k);
    mat_add3(&identity_d(), &scale(&k, b), &scale(&k2, c))
}

fn left_jacobian_inv_d(w: &V3) -> M3 {
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let d = if t2.re < 1e-8 {
        Dual::c(1.0 / 12.0) + t2 / Dual::c(720.0)
    } else {
        let t = t2.sqrt();
        let half = t * Dual::c(0.5);
        (Dual::c(1.0) - half * half.cos() / half.sin()) / t2
    };
    let k = skew_d(w);
    let k2 = mat_mul(&k, &k);
    mat_add3(&identity_d(), &scale(&k, Dual::c(-0.5)), &scale(&k2, d))
}

/// Canonical rotation log over duals using the atan2 formulation, which is
/// smooth across the whole working range of angles.
fn log_so3_d(r: &M3) -> V3 {
    let vee = [
        r[2][1] - r[1][2],
        r[0][2] - r[2][0],
        r[1][0] - r[0][1],
    ];
    let s2 = (vee[0] * vee[0] + vee[1] * vee[1] + vee[2] * vee[2]) * Dual::c(0.25);
    let c = (r[0][0] + r[1][1] + r[2][2] - Dual::c(1.0)) * Dual::c(0.5);
    let factor = if s2.re < 1e-12 {
        // theta^2 ~ 2 (1 - cos theta) to the order needed here.
        let t2 = (Dual::c(1.0) - c) * Dual::c(2.0);
        Dual::c(0.5) * (Dual::c(1.0) + t2 / Dual::c(12.0))
    } else {
        let s = s2.sqrt();
        let theta = s.atan2(c);
        Dual::c(0.5) * theta / s
    };
    [vee[0] * factor, vee[1] * factor, vee[2] * factor]
}

fn lift_pose(p: &Pose) -> (M3, V3) {
    let mut r = [[Dual::c(0.0); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            r[i][j] = Dual::c(p.rotation[(i, j)]);
        }
    }
    let t = [
        Dual::c(p.translation.x),
        Dual::c(p.translation.y),
        Dual::c(p.translation.z),
    ];
    (r, t)
}

/// Gradient of `-||log(A exp(h))||^2 / (2 sigma^2)` at `h = 0` with
/// `A = mean^-1 * at`, one dual sweep per coordinate.
pub fn score_via_dual(mean: &Pose, at: &Pose, sigma: f64) -> Twist {
    let a = mean.inverse().compose(at);
    let (ar, at_) = lift_pose(&a);
    let inv_s2 = 1.0 / (sigma * sigma);
    let mut out = Twist::zeros();
    for i in 0..6 {
        let z = Dual::c(0.0);
        let mut rho = [z; 3];
        let mut omega = [z; 3];
        for k in 0..3 {
            if i == k {
                rho[k] = Dual::var(0.0);
            }
            if i == k + 3 {
                omega[k] = Dual::var(0.0);
            }
        }
        // exp(h)
        let er = exp_so3_d(&omega);
        let et = mat_vec(&left_jacobian_d(&omega), &rho);
        // A * exp(h)
        let pr = mat_mul(&ar, &er);
        let mut pt = mat_vec(&ar, &et);
        for k in 0..3 {
            pt[k] = pt[k] + at_[k];
        }
        // log
        let w = log_so3_d(&pr);
        let p = mat_vec(&left_jacobian_inv_d(&w), &pt);
        let n2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
            + w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
        let f = -n2 * Dual::c(0.5 * inv_s2);
        out[i] = f.eps;
    }
    out
}

pub fn log_density_value(mean: &Pose, at: &Pose, sigma: f64) -> f64 {
    let a = mean.inverse().compose(at);
    let (ar, at_) = lift_pose(&a);
    let w = log_so3_d(&ar);
    let p = mat_vec(&left_jacobian_inv_d(&w), &at_);
    let n2 = p[0] * p[0] + p[1] * p[1] + p[2] * p[2]
        + w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    -0.5 * n2.re / (sigma * sigma)
}
