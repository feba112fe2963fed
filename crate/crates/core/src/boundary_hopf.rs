//! Diagnostics at a boundary Hopf point: equilibrium location, eigendata,
//! the six genericity conditions, boundary-equilibrium classification, Hopf
//! criticality via the first Lyapunov coefficient, and the closed-form
//! limiting trace/determinant values of the induced piecewise-linear map.

use crate::error::{Error, Result};
use crate::filippov::{FilippovModel, Params, Side};
use crate::numerics::{eig3, newton_system, Eigen3Result, ToleranceConfig};
use nalgebra::{Complex, DVector, Matrix3, Vector3};
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum BebType {
    Persistence,
    NonsmoothFold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Criticality {
    Supercritical,
    Subcritical,
}

/// Which of the non-degeneracy conditions hold at the codimension-two
/// point. Transversality conditions are tested as "nonzero to tolerance";
/// the sliding-sign condition keeps its sign (it separates attracting from
/// repelling sliding).
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct GenericityFlags {
    /// complex pair with beta > 0 and real eigenvalue gamma != 0
    pub eigs: bool,
    /// u . d > 0: an attracting sliding region exists locally
    pub attracting_sliding: bool,
    /// d/d(p1) of H(X*) nonzero: the equilibrium crosses the surface
    pub beb_transversal: bool,
    /// d/d(p2) of alpha nonzero: the pair crosses the imaginary axis
    pub hopf_transversal: bool,
    /// first Lyapunov coefficient resolvably nonzero
    pub hopf_nondegenerate: bool,
    /// u and w linearly independent
    pub uw_independent: bool,
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct Theorem1Limits {
    pub tau_l0: f64,
    pub tau_r0: f64,
    pub delta_r0: f64,
}

/// Full report at the codimension-two point.
#[derive(Debug, Clone)]
pub struct BoundaryHopfReport {
    pub params: [f64; 2],
    pub equilibrium: Vector3<f64>,
    pub eigen: Eigen3Result,
    /// gradient of the switching function at the equilibrium
    pub u: Vector3<f64>,
    /// value of the left field at the equilibrium
    pub d: Vector3<f64>,
    pub m_r: Matrix3<f64>,
    pub u_dot_d: f64,
    pub u_minv_d: f64,
    /// d/d(p1) of H(X*(p)) at the codimension-two point
    pub psi: f64,
    /// d/d(p2) of alpha(p) at the codimension-two point
    pub alpha_eta_slope: f64,
    pub beb_type: BebType,
    pub chi_hb_sign: Criticality,
    /// "lyapunov" or "simulation" (fallback when the coefficient is below
    /// resolution)
    pub chi_hb_method: &'static str,
    pub lyapunov_coefficient: Option<f64>,
    pub genericity: GenericityFlags,
    pub limits: Theorem1Limits,
}

impl BoundaryHopfReport {
    pub fn to_json(&self) -> serde_json::Value {
        let v3 = |v: &Vector3<f64>| vec![v[0], v[1], v[2]];
        json!({
            "model_params": self.params,
            "equilibrium": v3(&self.equilibrium),
            "eigen": {
                "alpha": self.eigen.alpha,
                "beta": self.eigen.beta,
                "gamma": self.eigen.gamma,
                "right_vec_v": v3(&self.eigen.right_vec_v),
                "left_vec_w": v3(&self.eigen.left_vec_w),
            },
            "u": v3(&self.u),
            "d": v3(&self.d),
            "m_r": (0..3).map(|i| vec![self.m_r[(i,0)], self.m_r[(i,1)], self.m_r[(i,2)]]).collect::<Vec<_>>(),
            "u_dot_d": self.u_dot_d,
            "u_minv_d": self.u_minv_d,
            "psi": self.psi,
            "alpha_eta_slope": self.alpha_eta_slope,
            "beb_type": format!("{:?}", self.beb_type),
            "chi_hb_sign": format!("{:?}", self.chi_hb_sign),
            "chi_hb_method": self.chi_hb_method,
            "lyapunov_coefficient": self.lyapunov_coefficient,
            "genericity": {
                "eigs": self.genericity.eigs,
                "attracting_sliding": self.genericity.attracting_sliding,
                "beb_transversal": self.genericity.beb_transversal,
                "hopf_transversal": self.genericity.hopf_transversal,
                "hopf_nondegenerate": self.genericity.hopf_nondegenerate,
                "uw_independent": self.genericity.uw_independent,
            },
            "limits": {
                "tau_l0": self.limits.tau_l0,
                "tau_r0": self.limits.tau_r0,
                "delta_r0": self.limits.delta_r0,
            },
        })
    }
}

/// Locate a zero of the right field by damped Newton iteration.
pub fn find_equilibrium(
    model: &FilippovModel,
    params: &Params,
    guess: &Vector3<f64>,
    tol: &ToleranceConfig,
) -> Result<Vector3<f64>> {
    let x0 = DVector::from_row_slice(guess.as_slice());
    let sol = newton_system(
        |x| {
            let v = model.f_right(&Vector3::new(x[0], x[1], x[2]), params);
            if !v.iter().all(|c| c.is_finite()) {
                return Err(Error::EvaluationFailure(
                    "right field non-finite during equilibrium search".into(),
                ));
            }
            Ok(DVector::from_row_slice(v.as_slice()))
        },
        &x0,
        tol,
    )?;
    Ok(Vector3::new(sol[0], sol[1], sol[2]))
}

/// Equilibrium plus eigendata at given parameters, warm-started from a
/// guess.
pub fn equilibrium_eigen(
    model: &FilippovModel,
    params: &Params,
    guess: &Vector3<f64>,
    tol: &ToleranceConfig,
) -> Result<(Vector3<f64>, Eigen3Result)> {
    let eq = find_equilibrium(model, params, guess, tol)?;
    let jac = model.jac_right(&eq, params);
    let eigen = eig3(&jac, tol)?;
    Ok((eq, eigen))
}

/// Closed-form limiting values of the normal-form parameters at the
/// codimension-two point.
pub fn theorem1_limits(
    u: &Vector3<f64>,
    d: &Vector3<f64>,
    v: &Vector3<f64>,
    w: &Vector3<f64>,
    beta0: f64,
    gamma0: f64,
) -> Result<Theorem1Limits> {
    let ud = u.dot(d);
    if ud.abs() < 1e-14 {
        return Err(Error::DegenerateDenominator("theorem1_limits: u . d".into()));
    }
    let k = (2.0 * std::f64::consts::PI * gamma0 / beta0).exp();
    Ok(Theorem1Limits {
        tau_l0: u.dot(v) * w.dot(d) / ud * (1.0 - k) + k,
        tau_r0: k + 1.0,
        delta_r0: k,
    })
}

fn bilinear_fd(
    f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    x0: &Vector3<f64>,
    u: &Vector3<f64>,
    v: &Vector3<f64>,
    h: f64,
) -> Vector3<f64> {
    (f(&(x0 + (u + v) * h)) - f(&(x0 + (u - v) * h)) - f(&(x0 - (u - v) * h))
        + f(&(x0 - (u + v) * h)))
        / (4.0 * h * h)
}

fn trilinear_fd(
    f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    x0: &Vector3<f64>,
    u: &Vector3<f64>,
    v: &Vector3<f64>,
    w: &Vector3<f64>,
    h: f64,
) -> Vector3<f64> {
    let g = |su: f64, sv: f64, sw: f64| f(&(x0 + (u * su + v * sv + w * sw) * h));
    (g(1.0, 1.0, 1.0) - g(1.0, 1.0, -1.0) - g(1.0, -1.0, 1.0) + g(1.0, -1.0, -1.0)
        - g(-1.0, 1.0, 1.0)
        + g(-1.0, 1.0, -1.0)
        + g(-1.0, -1.0, 1.0)
        - g(-1.0, -1.0, -1.0))
        / (8.0 * h * h * h)
}

type CVec = Vector3<Complex<f64>>;

fn c_split(z: &CVec) -> (Vector3<f64>, Vector3<f64>) {
    (
        Vector3::new(z[0].re, z[1].re, z[2].re),
        Vector3::new(z[0].im, z[1].im, z[2].im),
    )
}

fn c_join(re: Vector3<f64>, im: Vector3<f64>) -> CVec {
    CVec::new(
        Complex::new(re[0], im[0]),
        Complex::new(re[1], im[1]),
        Complex::new(re[2], im[2]),
    )
}

fn bilinear_c(
    f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    x0: &Vector3<f64>,
    z1: &CVec,
    z2: &CVec,
    h: f64,
) -> CVec {
    let (x1, y1) = c_split(z1);
    let (x2, y2) = c_split(z2);
    let re = bilinear_fd(f, x0, &x1, &x2, h) - bilinear_fd(f, x0, &y1, &y2, h);
    let im = bilinear_fd(f, x0, &x1, &y2, h) + bilinear_fd(f, x0, &y1, &x2, h);
    c_join(re, im)
}

fn trilinear_c(
    f: &dyn Fn(&Vector3<f64>) -> Vector3<f64>,
    x0: &Vector3<f64>,
    z1: &CVec,
    z2: &CVec,
    z3: &CVec,
    h: f64,
) -> CVec {
    let (x1, y1) = c_split(z1);
    let (x2, y2) = c_split(z2);
    let (x3, y3) = c_split(z3);
    let t = |a, b, c| trilinear_fd(f, x0, a, b, c, h);
    let re = t(&x1, &x2, &x3) - t(&x1, &y2, &y3) - t(&y1, &x2, &y3) - t(&y1, &y2, &x3);
    let im = t(&x1, &x2, &y3) + t(&x1, &y2, &x3) + t(&y1, &x2, &x3) - t(&y1, &y2, &y3);
    c_join(re, im)
}

fn c_inner(p: &CVec, q: &CVec) -> Complex<f64> {
    p[0].conj() * q[0] + p[1].conj() * q[1] + p[2].conj() * q[2]
}

/// First Lyapunov coefficient of the right field at an equilibrium with a
/// near-imaginary pair, by the projection method with finite-difference
/// second and third directional derivatives.
pub fn first_lyapunov_coefficient(
    model: &FilippovModel,
    params: &Params,
    equilibrium: &Vector3<f64>,
    tol: &ToleranceConfig,
) -> Result<f64> {
    let a = model.jac_right(equilibrium, params);
    let eigen = eig3(&a, tol)?;
    let omega = eigen.beta;

    // complex right/left eigenvectors of the pair, normalised <p, q> = 1
    let to_c = |m: &Matrix3<f64>, shift: Complex<f64>| {
        let mut out = nalgebra::Matrix3::<Complex<f64>>::zeros();
        for i in 0..3 {
            for j in 0..3 {
                out[(i, j)] = Complex::new(m[(i, j)], 0.0);
                if i == j {
                    out[(i, j)] -= shift;
                }
            }
        }
        out
    };
    let lam = Complex::new(0.0, omega);
    // null vectors via complex cross products of rows
    let nullvec = |mm: &nalgebra::Matrix3<Complex<f64>>| {
        let row = |i: usize| CVec::new(mm[(i, 0)], mm[(i, 1)], mm[(i, 2)]);
        let cr = |a: &CVec, b: &CVec| {
            CVec::new(
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            )
        };
        let (r0, r1, r2) = (row(0), row(1), row(2));
        let cands = [cr(&r0, &r1), cr(&r0, &r2), cr(&r1, &r2)];
        let nrm = |v: &CVec| (v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr()).sqrt();
        let best = cands.iter().max_by(|x, y| nrm(x).total_cmp(&nrm(y))).unwrap();
        best / Complex::new(nrm(best), 0.0)
    };
    let q = nullvec(&to_c(&a, lam));
    let p_raw = nullvec(&to_c(&a.transpose(), -lam));
    let s = c_inner(&p_raw, &q);
    if s.norm() < 1e-12 {
        return Err(Error::DegenerateSpectrum(
            "left/right Hopf eigenvectors nearly orthogonal".into(),
        ));
    }
    let p = p_raw / s.conj();

    let scale = equilibrium.norm().max(1.0);
    let h2 = f64::EPSILON.powf(0.25) * scale;
    let h3 = f64::EPSILON.powf(0.2) * scale;
    let f = |x: &Vector3<f64>| model.f_right(x, params);

    let qbar = CVec::new(q[0].conj(), q[1].conj(), q[2].conj());
    let b_qqbar = bilinear_c(&f, equilibrium, &q, &qbar, h2);
    let b_qq = bilinear_c(&f, equilibrium, &q, &q, h2);
    let c_qqqbar = trilinear_c(&f, equilibrium, &q, &q, &qbar, h3);

    // real solve: A r = B(q, qbar) (B(q, qbar) is real for symmetric B)
    let rhs_r = Vector3::new(b_qqbar[0].re, b_qqbar[1].re, b_qqbar[2].re);
    let r = a
        .lu()
        .solve(&rhs_r)
        .ok_or_else(|| Error::SingularJacobian("first_lyapunov_coefficient".into()))?;
    let r_c = c_join(r, Vector3::zeros());

    // complex solve: (2 i omega I - A) s = B(q, q)
    let m2 = to_c(&(-a), Complex::new(0.0, -2.0 * omega));
    // m2 = 2 i omega I - A  (to_c builds -a - shift*I with shift = -2 i omega)
    let lu = m2.lu();
    let s_vec = lu
        .solve(&b_qq)
        .ok_or_else(|| Error::SingularJacobian("first_lyapunov_coefficient".into()))?;

    let term1 = c_inner(&p, &c_qqqbar);
    let term2 = bilinear_c(&f, equilibrium, &q, &r_c, h2);
    let term3 = bilinear_c(&f, equilibrium, &qbar, &s_vec, h2);
    let val = term1 - Complex::new(2.0, 0.0) * c_inner(&p, &term2) + c_inner(&p, &term3);
    Ok(val.re / (2.0 * omega))
}

/// Criticality of the Hopf bifurcation of the right field.
pub fn hopf_criticality(
    model: &FilippovModel,
    params: &Params,
    equilibrium: &Vector3<f64>,
    tol: &ToleranceConfig,
) -> Result<Criticality> {
    let l1 = first_lyapunov_coefficient(model, params, equilibrium, tol)?;
    if l1.abs() < 1e-6 {
        return Err(Error::NearZeroCoefficient { value: l1 });
    }
    Ok(if l1 < 0.0 {
        Criticality::Supercritical
    } else {
        Criticality::Subcritical
    })
}

/// Simulation fallback: probe the unstable side of the Hopf line and test
/// whether nearby orbits of the right field settle onto a small cycle.
fn criticality_by_simulation(
    model: &FilippovModel,
    params: &Params,
    equilibrium: &Vector3<f64>,
    eigen: &Eigen3Result,
    alpha_slope: f64,
    tol: &ToleranceConfig,
) -> Result<Criticality> {
    use crate::filippov::rk45::{integrate_leg, StepControl};
    let delta = 1e-2 * params[1].abs().max(1.0) * alpha_slope.signum();
    let p_unstable = [params[0], params[1] + delta];
    let (eq_u, eig_u) = equilibrium_eigen(model, &p_unstable, equilibrium, tol)?;
    if eig_u.alpha <= 0.0 {
        return Err(Error::EvaluationFailure(
            "criticality probe failed to reach the unstable side".into(),
        ));
    }
    let t1 = eigen.jordan_transform_t.column(0).into_owned();
    let scale = eq_u.norm().max(1.0);
    let x0 = eq_u + t1.normalize() * (1e-3 * scale);
    let t_settle = (40.0 / eig_u.alpha).min(1e5) + 200.0 / eigen.beta;
    let res = integrate_leg(
        |_t, y| model.f_right(y, &p_unstable),
        0.0,
        &x0,
        t_settle,
        &mut [],
        &StepControl {
            rtol: 1e-8,
            atol: 1e-10,
            ..StepControl::default()
        },
        tol,
        1e6,
        |_| {},
        |_, _| {},
    )?;
    let amplitude = (res.y - eq_u).norm();
    Ok(if amplitude < 0.5 * scale {
        Criticality::Supercritical
    } else {
        Criticality::Subcritical
    })
}

/// Full genericity report at (or numerically near) the codimension-two
/// point: refines the parameter pair so that `H(X*) = 0` and `alpha = 0`,
/// then evaluates all diagnostics of the unfolding.
pub fn genericity_report(
    model: &FilippovModel,
    params_codim2: &Params,
    equilibrium_guess: &Vector3<f64>,
    tol: &ToleranceConfig,
) -> Result<BoundaryHopfReport> {
    // refine (p1, p2) by Newton on (H(X*), alpha)
    let mut eq_guess = *equilibrium_guess;
    let residual = |p: &DVector<f64>, eq_guess: &Vector3<f64>| -> Result<(DVector<f64>, Vector3<f64>)> {
        let pp = [p[0], p[1]];
        let (eq, eigen) = equilibrium_eigen(model, &pp, eq_guess, tol)?;
        Ok((
            DVector::from_row_slice(&[model.h(&eq, &pp), eigen.alpha]),
            eq,
        ))
    };
    let p_star = {
        let eq_cell = std::cell::RefCell::new(eq_guess);
        let sol = newton_system(
            |p| {
                let (r, eq) = residual(p, &eq_cell.borrow())?;
                *eq_cell.borrow_mut() = eq;
                Ok(r)
            },
            &DVector::from_row_slice(params_codim2),
            &ToleranceConfig {
                abs_tol: tol.abs_tol.max(1e-12),
                fd_step: 1e-5,
                ..tol.clone()
            },
        )?;
        eq_guess = *eq_cell.borrow();
        [sol[0], sol[1]]
    };

    let (eq, eigen) = equilibrium_eigen(model, &p_star, &eq_guess, tol)?;
    let h_res = model.h(&eq, &p_star);
    if h_res.abs() > 1e-6 || eigen.alpha.abs() > 1e-6 {
        return Err(Error::NotCodimTwo {
            h: h_res.abs(),
            alpha: eigen.alpha.abs(),
        });
    }

    let u = model.grad_h(&eq, &p_star);
    let d = model.f_left(&eq, &p_star);
    let m_r = model.jac_right(&eq, &p_star);
    let u_dot_d = u.dot(&d);
    let m_inv_d = m_r
        .lu()
        .solve(&d)
        .ok_or_else(|| Error::SingularJacobian("genericity_report: M_R".into()))?;
    let u_minv_d = u.dot(&m_inv_d);

    // independence of u and w, as the angle between the lines they span
    let w = eigen.left_vec_w;
    let sin_angle = u.cross(&w).norm() / (u.norm() * w.norm());
    if sin_angle <= 1e-6 {
        return Err(Error::DependentVectors { angle: sin_angle });
    }

    // psi and the alpha slope by central differences in the parameters
    let dp1 = 1e-5 * p_star[0].abs().max(1.0);
    let h_of = |p1: f64| -> Result<f64> {
        let pp = [p1, p_star[1]];
        let (e, _) = equilibrium_eigen(model, &pp, &eq, tol)?;
        Ok(model.h(&e, &pp))
    };
    let psi = (h_of(p_star[0] + dp1)? - h_of(p_star[0] - dp1)?) / (2.0 * dp1);

    let dp2 = 1e-5 * p_star[1].abs().max(1.0);
    let alpha_of = |p2: f64| -> Result<f64> {
        let pp = [p_star[0], p2];
        let (_, eg) = equilibrium_eigen(model, &pp, &eq, tol)?;
        Ok(eg.alpha)
    };
    let alpha_eta_slope = (alpha_of(p_star[1] + dp2)? - alpha_of(p_star[1] - dp2)?) / (2.0 * dp2);

    let (chi, method, l1) =
        match first_lyapunov_coefficient(model, &p_star, &eq, tol) {
            Ok(l1) if l1.abs() >= 1e-6 => (
                if l1 < 0.0 {
                    Criticality::Supercritical
                } else {
                    Criticality::Subcritical
                },
                "lyapunov",
                Some(l1),
            ),
            Ok(l1) => (
                criticality_by_simulation(model, &p_star, &eq, &eigen, alpha_eta_slope, tol)?,
                "simulation",
                Some(l1),
            ),
            Err(Error::NearZeroCoefficient { value }) => (
                criticality_by_simulation(model, &p_star, &eq, &eigen, alpha_eta_slope, tol)?,
                "simulation",
                Some(value),
            ),
            Err(e) => return Err(e),
        };

    let genericity = GenericityFlags {
        eigs: eigen.beta > tol.abs_tol && eigen.gamma.abs() > tol.abs_tol,
        attracting_sliding: u_dot_d > 0.0,
        beb_transversal: psi.abs() > 1e-8,
        hopf_transversal: alpha_eta_slope.abs() > 1e-8,
        hopf_nondegenerate: l1.map(|v| v.abs() >= 1e-6).unwrap_or(false) || method == "simulation",
        uw_independent: true,
    };

    let limits = theorem1_limits(
        &u,
        &d,
        &eigen.right_vec_v,
        &eigen.left_vec_w,
        eigen.beta,
        eigen.gamma,
    )?;

    Ok(BoundaryHopfReport {
        params: p_star,
        equilibrium: eq,
        eigen,
        u,
        d,
        m_r,
        u_dot_d,
        u_minv_d,
        psi,
        alpha_eta_slope,
        beb_type: if u_minv_d < 0.0 {
            BebType::Persistence
        } else {
            BebType::NonsmoothFold
        },
        chi_hb_sign: chi,
        chi_hb_method: method,
        lyapunov_coefficient: l1,
        genericity,
        limits,
    })
}
