//! Real roots of quartic polynomials via the companion matrix, polished by
//! Newton iteration. Used for ray/torus intersection, where closed-form
//! resolvent formulas are notoriously unstable near grazing hits.

use nalgebra::Matrix4;

/// Real roots of `t^4 + a3 t^3 + a2 t^2 + a1 t + a0`, ascending. Roots whose
/// imaginary part exceeds a scale-relative tolerance are discarded; the rest
/// are polished on the original polynomial.
pub fn quartic_real_roots(a3: f64, a2: f64, a1: f64, a0: f64) -> Vec<f64> {
    let companion = Matrix4::new(
        0.0, 0.0, 0.0, -a0, //
        1.0, 0.0, 0.0, -a1, //
        0.0, 1.0, 0.0, -a2, //
        0.0, 0.0, 1.0, -a3,
    );
    let eig = companion.complex_eigenvalues();
    let p = |t: f64| (((t + a3) * t + a2) * t + a1) * t + a0;
    let dp = |t: f64| ((4.0 * t + 3.0 * a3) * t + 2.0 * a2) * t + a1;
    let mut roots = Vec::new();
    for e in eig.iter() {
        let scale = 1.0 + e.re.abs();
        if e.im.abs() > 1e-6 * scale {
            continue;
        }
        let mut t = e.re;
        for _ in 0..3 {
            let d = dp(t);
            if d.abs() < 1e-300 {
                break;
            }
            let step = p(t) / d;
            if !step.is_finite() {
                break;
            }
            t -= step;
        }
        if t.is_finite() {
            roots.push(t);
        }
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    // Collapse near-duplicates kept by the eigenvalue filter (double roots).
    roots.dedup_by(|a, b| (*a - *b).abs() < 1e-9 * (1.0 + a.abs()));
    roots
}
