//! Shared numerical kernels: bracketed scalar root finding, damped Newton
//! iteration for small systems, eigen-decomposition of 3x3 matrices with a
//! real Jordan transform, and finite-difference Jacobians.

use crate::error::{Error, Result};
use nalgebra::{Complex, DMatrix, DVector, Matrix3, Vector3};

/// Tolerances shared by the numerical kernels.
#[derive(Debug, Clone)]
pub struct ToleranceConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Base finite-difference step; scaled by `max(1, |x|)` at use sites.
    pub fd_step: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_iter: 100,
            // cube root of machine epsilon, the central-difference optimum
            fd_step: f64::EPSILON.cbrt(),
            // (~6.06e-6)
        }
    }
}

impl ToleranceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.abs_tol > 0.0 && self.rel_tol > 0.0 && self.fd_step > 0.0 && self.max_iter >= 1 {
            Ok(())
        } else {
            Err(Error::SchemaError(
                "tolerances must be positive and max_iter >= 1".into(),
            ))
        }
    }
}

/// Eigen-decomposition of a 3x3 matrix with one real eigenvalue and one
/// complex-conjugate pair.
///
/// `jordan_transform_t` satisfies `T^-1 M T = [[a, b, 0], [-b, a, 0], [0, 0, g]]`
/// with `b > 0`, and `left_vec_w . right_vec_v = 1`.
#[derive(Debug, Clone)]
pub struct Eigen3Result {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub right_vec_v: Vector3<f64>,
    pub left_vec_w: Vector3<f64>,
    pub jordan_transform_t: Matrix3<f64>,
}

impl Eigen3Result {
    pub fn real_jordan_form(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.alpha, self.beta, 0.0, -self.beta, self.alpha, 0.0, 0.0, 0.0, self.gamma,
        )
    }
}

/// Brent-style bracketed scalar root finder (bisection with secant and
/// inverse-quadratic acceleration). Derivative-free and robust for event
/// times.
pub fn scalar_root_bracketed<F>(mut f: F, lo: f64, hi: f64, tol: &ToleranceConfig) -> Result<f64>
where
    F: FnMut(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if !fa.is_finite() || !fb.is_finite() {
        return Err(Error::EvaluationFailure(format!(
            "non-finite value at bracket endpoints ({fa}, {fb})"
        )));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa * fb > 0.0 {
        return Err(Error::NoBracket { lo, hi });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..tol.max_iter.max(200) {
        if fb.abs() > fc.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol.abs_tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 || fb.abs() <= tol.abs_tol {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            if 2.0 * p < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 {
            d
        } else {
            tol1.copysign(xm)
        };
        fb = f(b);
        if !fb.is_finite() {
            return Err(Error::EvaluationFailure(format!(
                "non-finite value at x = {b}"
            )));
        }
        if (fb > 0.0) == (fc > 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
    }
    Err(Error::NoConvergence {
        context: "scalar_root_bracketed".into(),
        iterations: tol.max_iter.max(200),
        residual: fb.abs(),
    })
}

/// Damped Newton iteration for a small square system, using a central
/// finite-difference Jacobian.
pub fn newton_system<F>(mut f: F, x0: &DVector<f64>, tol: &ToleranceConfig) -> Result<DVector<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x0.len();
    let mut x = x0.clone();
    let mut fx = f(&x)?;
    if fx.len() != n {
        return Err(Error::EvaluationFailure(format!(
            "newton_system expects a square system, got {} equations for {} unknowns",
            fx.len(),
            n
        )));
    }
    for _ in 0..tol.max_iter {
        let rnorm = fx.norm();
        if rnorm <= tol.abs_tol {
            return Ok(x);
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = tol.fd_step * x[j].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let fp = f(&xp)?;
            let fm = f(&xm)?;
            for i in 0..n {
                jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        let lu = jac.lu();
        let step = lu
            .solve(&fx)
            .ok_or_else(|| Error::SingularJacobian("newton_system".into()))?;
        // damping: halve until the residual actually decreases
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..10 {
            let cand = &x - &step * lambda;
            match f(&cand) {
                Ok(fc) if fc.norm() < rnorm => {
                    x = cand;
                    fx = fc;
                    accepted = true;
                    break;
                }
                _ => lambda *= 0.5,
            }
        }
        if !accepted {
            // take the full step anyway; near-singular directions stall otherwise
            x -= &step;
            fx = f(&x)?;
        }
    }
    let rnorm = fx.norm();
    if rnorm <= tol.abs_tol * 10.0 {
        return Ok(x);
    }
    Err(Error::NoConvergence {
        context: "newton_system".into(),
        iterations: tol.max_iter,
        residual: rnorm,
    })
}

fn null_vector_real(a: &Matrix3<f64>) -> Vector3<f64> {
    let r0 = Vector3::new(a[(0, 0)], a[(0, 1)], a[(0, 2)]);
    let r1 = Vector3::new(a[(1, 0)], a[(1, 1)], a[(1, 2)]);
    let r2 = Vector3::new(a[(2, 0)], a[(2, 1)], a[(2, 2)]);
    let cands = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let best = cands
        .iter()
        .max_by(|x, y| x.norm().total_cmp(&y.norm()))
        .unwrap();
    best / best.norm()
}

fn complex_cross(
    a: &Vector3<Complex<f64>>,
    b: &Vector3<Complex<f64>>,
) -> Vector3<Complex<f64>> {
    Vector3::new(
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )
}

fn null_vector_complex(
    m: &Matrix3<f64>,
    lambda: Complex<f64>,
) -> Vector3<Complex<f64>> {
    let c = |i: usize, j: usize| {
        Complex::new(m[(i, j)], 0.0) - if i == j { lambda } else { Complex::new(0.0, 0.0) }
    };
    let r0 = Vector3::new(c(0, 0), c(0, 1), c(0, 2));
    let r1 = Vector3::new(c(1, 0), c(1, 1), c(1, 2));
    let r2 = Vector3::new(c(2, 0), c(2, 1), c(2, 2));
    let cands = [
        complex_cross(&r0, &r1),
        complex_cross(&r0, &r2),
        complex_cross(&r1, &r2),
    ];
    let norm = |v: &Vector3<Complex<f64>>| (v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr()).sqrt();
    let best = cands.iter().max_by(|x, y| norm(x).total_cmp(&norm(y))).unwrap();
    best / Complex::new(norm(best), 0.0)
}

/// Real root of a monic cubic `x^3 + c2 x^2 + c1 x + c0` known to have a
/// single real root; errors if all three roots are real.
fn cubic_single_real_root(c2: f64, c1: f64, c0: f64) -> Result<f64> {
    let p = c1 - c2 * c2 / 3.0;
    let q = 2.0 * c2.powi(3) / 27.0 - c2 * c1 / 3.0 + c0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc <= 0.0 {
        return Err(Error::DegenerateSpectrum(
            "three real eigenvalues".into(),
        ));
    }
    let sq = disc.sqrt();
    // pick the cube root with no cancellation, recover the partner from p
    let big = if q <= 0.0 { -q / 2.0 + sq } else { -q / 2.0 - sq };
    let a = big.cbrt();
    let b = if a != 0.0 { -p / (3.0 * a) } else { 0.0 };
    let mut t = a + b;
    // Newton polish on the depressed cubic
    for _ in 0..4 {
        let ft = t * t * t + p * t + q;
        let dft = 3.0 * t * t + p;
        if dft != 0.0 {
            t -= ft / dft;
        }
    }
    Ok(t - c2 / 3.0)
}

/// Eigen-decomposition of a 3x3 matrix assumed to have one real eigenvalue
/// `gamma` and one complex pair `alpha +/- i beta` with `beta > 0`.
///
/// The transform columns are `[Re u, Im u, v]` where `u` is an eigenvector
/// of `alpha + i beta`; `v` is rescaled so that `w . v = 1`.
pub fn eig3(m: &Matrix3<f64>, tol: &ToleranceConfig) -> Result<Eigen3Result> {
    let tr = m.trace();
    let m2 = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)])
        + (m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)])
        + (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)]);
    let det = m.determinant();
    // characteristic polynomial: l^3 - tr l^2 + m2 l - det
    let gamma = cubic_single_real_root(-tr, m2, -det)?;
    let alpha = (tr - gamma) / 2.0;
    // product of the complex pair, via deflation
    let pair_prod = if gamma.abs() > 1e-300 {
        det / gamma
    } else {
        m2 - 2.0 * alpha * gamma
    };
    let beta_sq = pair_prod - alpha * alpha;
    if beta_sq <= tol.abs_tol * tol.abs_tol {
        return Err(Error::DegenerateSpectrum(format!(
            "complex pair has |beta| <= {:e}",
            tol.abs_tol
        )));
    }
    let beta = beta_sq.sqrt();

    let v_unit = null_vector_real(&(m - Matrix3::identity() * gamma));
    let w_unit = null_vector_real(&(m.transpose() - Matrix3::identity() * gamma));
    let wv = w_unit.dot(&v_unit);
    if wv.abs() < 1e-12 {
        return Err(Error::NonInvertibleTransform);
    }
    let v = v_unit / wv;
    let w = w_unit;

    let uc = null_vector_complex(m, Complex::new(alpha, beta));
    let t1 = Vector3::new(uc[0].re, uc[1].re, uc[2].re);
    let t2 = Vector3::new(uc[0].im, uc[1].im, uc[2].im);
    let t = Matrix3::from_columns(&[t1, t2, v]);
    let t_inv = t.try_inverse().ok_or(Error::NonInvertibleTransform)?;

    let result = Eigen3Result {
        alpha,
        beta,
        gamma,
        right_vec_v: v,
        left_vec_w: w,
        jordan_transform_t: t,
    };
    // consistency: the transform must reproduce the real Jordan form
    let jordan = t_inv * m * t;
    let scale = m.norm().max(1.0);
    if (jordan - result.real_jordan_form()).norm() > 1e-6 * scale {
        return Err(Error::NonInvertibleTransform);
    }
    Ok(result)
}

/// Central-difference Jacobian of `f` at `x` with absolute step `step`.
pub fn fd_jacobian<F>(mut f: F, x: &DVector<f64>, step: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += step;
        xm[j] -= step;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        cols.push((fp - fm) / (2.0 * step));
    }
    let m = cols[0].len();
    let mut jac = DMatrix::zeros(m, n);
    for (j, col) in cols.iter().enumerate() {
        jac.set_column(j, col);
    }
    Ok(jac)
}

/// Default central-difference step for states of magnitude `scale`.
pub fn default_fd_step(scale: f64) -> f64 {
    f64::EPSILON.cbrt() * scale.max(1.0)
}

/// Richardson extrapolation of `f(h) -> f(0)` for samples on a geometric
/// sequence `h, h/r, h/r^2, ...` (largest step first), eliminating error
/// powers `h^1, h^2, ...` in turn.
pub fn richardson_limit(values: &[f64], ratio: f64) -> f64 {
    let n = values.len();
    let mut table: Vec<f64> = values.to_vec();
    for level in 1..n {
        let factor = ratio.powi(level as i32);
        for i in (level..n).rev() {
            table[i] = (factor * table[i] - table[i - 1]) / (factor - 1.0);
        }
    }
    table[n - 1]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    #[test]
    fn root_of_quadratic() {
        let r = scalar_root_bracketed(|x| x * x - 2.0, 1.0, 2.0, &tol()).unwrap();
        assert_abs_diff_eq!(r, std::f64::consts::SQRT_2, epsilon = 1e-8);
    }

    #[test]
    fn root_of_odd_function() {
        let r = scalar_root_bracketed(|x| x, -1.0, 1.0, &tol()).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn root_inverts_floquet_trace() {
        // invert tau_R(gamma) = exp(2 pi gamma) + 1 at the value produced by
        // the forward map, recovering gamma = -1/5
        let target = (2.0 * std::f64::consts::PI * -0.2).exp() + 1.0;
        let r = scalar_root_bracketed(
            |g| (2.0 * std::f64::consts::PI * g).exp() + 1.0 - target,
            -1.0,
            0.0,
            &tol(),
        )
        .unwrap();
        assert_abs_diff_eq!(r, -0.2, epsilon = 1e-9);
    }

    #[test]
    fn no_bracket_is_reported() {
        let e = scalar_root_bracketed(|x| x * x + 1.0, -1.0, 1.0, &tol()).unwrap_err();
        assert_eq!(e.kind(), "NoBracket");
    }

    #[test]
    fn newton_is_exact_on_linear_systems() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.0, 3.0, 1.0, 1.0, 0.0, 4.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0, 3.0]);
        let expected = m.clone().lu().solve(&b).unwrap();
        let x = newton_system(
            |x| Ok(&m * x - &b),
            &DVector::from_row_slice(&[0.0, 0.0, 0.0]),
            &tol(),
        )
        .unwrap();
        assert!((x - expected).norm() < 1e-9);
    }

    #[test]
    fn newton_is_idempotent_at_a_root() {
        let f = |x: &DVector<f64>| {
            Ok(DVector::from_row_slice(&[
                x[0] * x[0] + x[1] - 1.0,
                x[1] * x[1] * x[1] - x[0],
            ]))
        };
        let x = newton_system(f, &DVector::from_row_slice(&[0.7, 0.5]), &tol()).unwrap();
        let again = newton_system(f, &x, &tol()).unwrap();
        assert!((again - x).norm() < 1e-10);
    }

    #[test]
    fn eig3_toy_jacobian_gives_identity_transform() {
        let m = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -0.2);
        let e = eig3(&m, &tol()).unwrap();
        assert_abs_diff_eq!(e.alpha, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.beta, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.gamma, -0.2, epsilon = 1e-12);
        assert!((e.right_vec_v - Vector3::z()).norm() < 1e-12);
        assert!((e.left_vec_w - Vector3::z()).norm() < 1e-12);
        // columns may carry an arbitrary rotation in the oscillation plane,
        // but for this matrix the plane is spanned by e1, e2 and the Jordan
        // check inside eig3 pins the orientation
        let j =
            e.jordan_transform_t.try_inverse().unwrap() * m * e.jordan_transform_t;
        assert!((j - e.real_jordan_form()).norm() < 1e-12);
        assert_abs_diff_eq!(e.left_vec_w.dot(&e.right_vec_v), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn eig3_block_diagonal() {
        let m = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 2.0, 3.0, 0.0, -3.0, 2.0);
        let e = eig3(&m, &tol()).unwrap();
        assert_abs_diff_eq!(e.gamma, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.alpha, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.beta, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn eig3_rejects_three_real_eigenvalues() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0);
        let e = eig3(&m, &tol()).unwrap_err();
        assert_eq!(e.kind(), "DegenerateSpectrum");
    }

    #[test]
    fn fd_jacobian_recovers_linear_map() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let j = fd_jacobian(
            |x| Ok(&m * x),
            &DVector::from_row_slice(&[0.3, -0.7]),
            1e-5,
        )
        .unwrap();
        assert!((j - m).norm() < 1e-9);
    }

    #[test]
    fn fd_jacobian_on_quadratic_map() {
        // f(x) = (x1^2, x1 x2) at (1,1) -> [[2,0],[1,1]]
        let j = fd_jacobian(
            |x| Ok(DVector::from_row_slice(&[x[0] * x[0], x[0] * x[1]])),
            &DVector::from_row_slice(&[1.0, 1.0]),
            1e-4,
        )
        .unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 1.0]);
        assert!((j - expected).norm() < 1e-6);
    }

    #[test]
    fn fd_jacobian_is_second_order() {
        let f = |x: &DVector<f64>| {
            Ok(DVector::from_row_slice(&[
                (x[0]).sin() * (x[1]).exp(),
                x[0] * x[0] * x[1],
            ]))
        };
        let x = DVector::from_row_slice(&[0.4, -0.3]);
        let exact = DMatrix::from_row_slice(
            2,
            2,
            &[
                0.4_f64.cos() * (-0.3_f64).exp(),
                0.4_f64.sin() * (-0.3_f64).exp(),
                2.0 * 0.4 * -0.3,
                0.4 * 0.4,
            ],
        );
        let e1 = (fd_jacobian(f, &x, 1e-3).unwrap() - &exact).norm();
        let e2 = (fd_jacobian(f, &x, 5e-4).unwrap() - &exact).norm();
        let ratio = e1 / e2;
        assert!(
            (3.0..5.0).contains(&ratio),
            "halving the step should cut the error ~4x, got {ratio}"
        );
    }

    #[test]
    fn richardson_converges_on_power_series() {
        // f(h) = 1 + h + h^2 + h^3
        let f = |h: f64| 1.0 + h + h * h + h * h * h;
        let vals = [f(0.4), f(0.2), f(0.1), f(0.05)];
        let lim = richardson_limit(&vals, 2.0);
        assert_abs_diff_eq!(lim, 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn eig3_reconstructs_random_matrices(
            alpha in -2.0f64..2.0,
            beta in 0.1f64..3.0,
            gamma_mag in 0.1f64..2.0,
            gamma_sign in prop::bool::ANY,
            s in prop::array::uniform9(-0.4f64..0.4),
        ) {
            let gamma = if gamma_sign { gamma_mag } else { -gamma_mag };
            let jordan = Matrix3::new(alpha, beta, 0.0, -beta, alpha, 0.0, 0.0, 0.0, gamma);
            let pert = Matrix3::from_row_slice(&s);
            let t = Matrix3::identity() + pert;
            prop_assume!(t.determinant().abs() > 0.2);
            let m = t * jordan * t.try_inverse().unwrap();
            let e = eig3(&m, &tol()).unwrap();
            prop_assert!((e.alpha - alpha).abs() < 1e-8);
            prop_assert!((e.beta - beta).abs() < 1e-8);
            prop_assert!((e.gamma - gamma).abs() < 1e-8);
            let tt = e.jordan_transform_t;
            let rebuilt = tt * e.real_jordan_form() * tt.try_inverse().unwrap();
            prop_assert!((rebuilt - m).norm() / m.norm() < 1e-10);
            prop_assert!((e.left_vec_w.dot(&e.right_vec_v) - 1.0).abs() < 1e-10);
        }
    }
}
