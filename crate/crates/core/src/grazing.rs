//! Grazing-cycle location and extraction of the border-collision
//! normal-form parameters along the grazing-sliding curve.
//!
//! The return map of the right field is differentiated on the fold section
//! Omega = { L_{F_R} H = 0 }; sliding excursions enter through a local
//! discontinuity map whose linear part is `X -> X + Z H(X)` with `Z` a
//! fixed combination of the two fields at the fold. Closed forms for both
//! derivative factors in blown-up Jordan coordinates serve as oracles.

use crate::boundary_hopf::equilibrium_eigen;
use crate::error::{Error, Result};
use crate::filippov::rk45::{integrate_leg, EventFn, LegEnd, StepControl};
use crate::filippov::{sliding_field_unchecked, FilippovModel, Params, Side};
use crate::numerics::{newton_system, ToleranceConfig};
use nalgebra::{DVector, Matrix2, Vector3};

/// A limit cycle of the right field tangent to the switching surface.
#[derive(Debug, Clone)]
pub struct GrazingCycle {
    /// The tangency point G on both the surface and the fold section.
    pub grazing_point: Vector3<f64>,
    pub period: f64,
    /// Value of the first bifurcation parameter.
    pub nu: f64,
    /// Solved value of the second parameter on the grazing curve.
    pub eta_gs: f64,
    pub cycle_samples: Vec<Vector3<f64>>,
}

impl GrazingCycle {
    pub fn params(&self) -> Params {
        [self.nu, self.eta_gs]
    }

    pub fn diameter(&self) -> f64 {
        let mut lo = self.cycle_samples[0];
        let mut hi = lo;
        for s in &self.cycle_samples {
            for i in 0..3 {
                lo[i] = lo[i].min(s[i]);
                hi[i] = hi[i].max(s[i]);
            }
        }
        (hi - lo).norm()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MuSide {
    /// mu = +1: the side where the unperturbed cycle persists.
    BeforeGrazing,
    /// mu = -1: the side analysed by the reduced map.
    AfterGrazing,
}

impl MuSide {
    pub fn mu(&self) -> f64 {
        match self {
            MuSide::BeforeGrazing => 1.0,
            MuSide::AfterGrazing => -1.0,
        }
    }
}

/// Trace/determinant pairs of the two pieces of the local return map.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct NormalFormParams {
    pub tau_l: f64,
    /// Numerically computed determinant of the sliding piece; vanishes up
    /// to rounding because sliding orbits pass through the fold curve.
    pub delta_l: f64,
    pub tau_r: f64,
    pub delta_r: f64,
    pub mu_side: MuSide,
}

/// Linear part of the grazing-sliding discontinuity map at a fold point.
#[derive(Debug, Clone)]
pub struct DiscMapLinear {
    pub z_field: Vector3<f64>,
    pub fold_point: Vector3<f64>,
}

impl DiscMapLinear {
    /// Apply the linearised correction `X + Z H(X)`.
    pub fn apply(&self, model: &FilippovModel, params: &Params, x: &Vector3<f64>) -> Result<Vector3<f64>> {
        let h = model.h(x, params);
        if h > 0.0 {
            return Err(Error::WrongSide { h });
        }
        Ok(x + self.z_field * h)
    }
}

/// Seed for the grazing-cycle solver.
#[derive(Debug, Clone)]
pub enum GrazingSeed {
    /// Warm start from a nearby solution.
    Cycle {
        anchor: Vector3<f64>,
        period: f64,
    },
    /// Bootstrap by simulating the right field from near this equilibrium
    /// guess until a cycle is reached.
    Equilibrium(Vector3<f64>),
}

pub(crate) fn flow_right(
    model: &FilippovModel,
    p: &Params,
    x0: &Vector3<f64>,
    t: f64,
    rtol: f64,
) -> Result<Vector3<f64>> {
    let res = integrate_leg(
        |_t, y| model.f_right(y, p),
        0.0,
        x0,
        t,
        &mut [],
        &StepControl {
            rtol,
            atol: rtol * 1e-2,
            ..StepControl::default()
        },
        &ToleranceConfig::default(),
        1e9,
        |_| {},
        |_, _| {},
    )?;
    Ok(res.y)
}

/// Flow the right field until the next upward crossing of the fold
/// section, ignoring crossings before `t_skip`.
fn flow_right_to_omega(
    model: &FilippovModel,
    p: &Params,
    x0: &Vector3<f64>,
    t_skip: f64,
    t_max: f64,
    rtol: f64,
) -> Result<(f64, Vector3<f64>)> {
    let ctrl = StepControl {
        rtol,
        atol: rtol * 1e-2,
        ..StepControl::default()
    };
    let tol = ToleranceConfig::default();
    let mut t0 = 0.0;
    let mut x = *x0;
    if t_skip > 0.0 {
        let res = integrate_leg(
            |_t, y| model.f_right(y, p),
            0.0,
            &x,
            t_skip,
            &mut [],
            &ctrl,
            &tol,
            1e9,
            |_| {},
            |_, _| {},
        )?;
        t0 = res.t;
        x = res.y;
    }
    let mut events = [EventFn {
        g: Box::new(|_t: f64, y: &Vector3<f64>| model.lie_derivative(Side::Right, y, p)),
        direction: 1,
        arm_band: 0.0,
    }];
    let res = integrate_leg(
        |_t, y| model.f_right(y, p),
        t0,
        &x,
        t_max,
        &mut events,
        &ctrl,
        &tol,
        1e9,
        |_| {},
        |_, _| {},
    )?;
    match res.end {
        LegEnd::Event { t, y, .. } => Ok((t, y)),
        _ => Err(Error::NoConvergence {
            context: "flow_right_to_omega: no fold-section crossing".into(),
            iterations: 0,
            residual: f64::NAN,
        }),
    }
}

/// Solve for a limit cycle of the right field anchored on the fold
/// section: unknowns (X, T) with `flow_T(X) = X` and `L_{F_R} H(X) = 0`.
fn solve_cycle_on_omega(
    model: &FilippovModel,
    p: &Params,
    anchor: &Vector3<f64>,
    period: f64,
    rtol: f64,
) -> Result<(Vector3<f64>, f64)> {
    let z0 = DVector::from_row_slice(&[anchor[0], anchor[1], anchor[2], period]);
    let ntol = ToleranceConfig {
        abs_tol: 1e-10,
        rel_tol: 1e-10,
        max_iter: 40,
        fd_step: 1e-6,
    };
    let sol = newton_system(
        |z| {
            let x = Vector3::new(z[0], z[1], z[2]);
            let t = z[3];
            if t <= 0.0 {
                return Err(Error::EvaluationFailure("negative period".into()));
            }
            let xf = flow_right(model, p, &x, t, rtol)?;
            Ok(DVector::from_row_slice(&[
                xf[0] - x[0],
                xf[1] - x[1],
                xf[2] - x[2],
                model.lie_derivative(Side::Right, &x, p),
            ]))
        },
        &z0,
        &ntol,
    )?;
    let x = Vector3::new(sol[0], sol[1], sol[2]);
    let mut anchor = x;
    let mut period = sol[3];
    // the anchor must sit on the visible branch of the fold section, where
    // the orbit's H-value is at a minimum
    if model.lie_derivative2(&anchor, p) < 0.0 {
        let (dt, other) = flow_right_to_omega(model, p, &anchor, period * 0.1, period, rtol)?;
        anchor = other;
        let _ = dt;
        let z1 = DVector::from_row_slice(&[anchor[0], anchor[1], anchor[2], period]);
        let sol = newton_system(
            |z| {
                let x = Vector3::new(z[0], z[1], z[2]);
                let t = z[3];
                let xf = flow_right(model, p, &x, t, rtol)?;
                Ok(DVector::from_row_slice(&[
                    xf[0] - x[0],
                    xf[1] - x[1],
                    xf[2] - x[2],
                    model.lie_derivative(Side::Right, &x, p),
                ]))
            },
            &z1,
            &ntol,
        )?;
        anchor = Vector3::new(sol[0], sol[1], sol[2]);
        period = sol[3];
    }
    Ok((anchor, period))
}

/// Find a stable limit cycle of the right field by simulation from near
/// the (unstable) equilibrium, returning an anchor on the fold section and
/// the period. Used to seed shooting solvers.
pub fn bootstrap_right_cycle(
    model: &FilippovModel,
    p: &Params,
    eq_guess: &Vector3<f64>,
    tol: &ToleranceConfig,
) -> Result<(Vector3<f64>, f64)> {
    bootstrap_cycle(model, p, eq_guess, tol, 1e-11)
}

fn bootstrap_cycle(
    model: &FilippovModel,
    p: &Params,
    eq_guess: &Vector3<f64>,
    tol: &ToleranceConfig,
    rtol: f64,
) -> Result<(Vector3<f64>, f64)> {
    let (eq, eigen) = equilibrium_eigen(model, p, eq_guess, tol)?;
    if eigen.alpha <= 0.0 {
        return Err(Error::NoConvergence {
            context: format!(
                "bootstrap_cycle: no limit cycle at ({}, {}) (alpha = {:.3e})",
                p[0], p[1], eigen.alpha
            ),
            iterations: 0,
            residual: eigen.alpha,
        });
    }
    let scale = eq.norm().max(1.0);
    let dir = eigen.jordan_transform_t.column(0).normalize();
    let x0 = eq + dir * (1e-2 * scale);
    let period_est = 2.0 * std::f64::consts::PI / eigen.beta;
    let transient = (5.0 / eigen.alpha).min(5e4) + 20.0 * period_est;
    let x1 = flow_right(model, p, &x0, transient, rtol.max(1e-9))?;
    // two successive upward fold-section crossings give anchor and period
    let (_t_a, a) = flow_right_to_omega(model, p, &x1, 0.0, 20.0 * period_est, rtol)?;
    let (t_b, _b) = flow_right_to_omega(model, p, &a, period_est * 0.2, 20.0 * period_est, rtol)?;
    Ok((a, t_b))
}

/// Newton solve of the full grazing system: unknowns (X, T, eta) with
/// periodicity, the fold-section anchor, and tangency to the surface.
fn grazing_system_solve(
    model: &FilippovModel,
    nu: f64,
    anchor: &Vector3<f64>,
    period: f64,
    eta: f64,
    rtol: f64,
) -> Result<(Vector3<f64>, f64, f64)> {
    let z0 = DVector::from_row_slice(&[anchor[0], anchor[1], anchor[2], period, eta]);
    let ntol = ToleranceConfig {
        abs_tol: 1e-11,
        rel_tol: 1e-11,
        max_iter: 50,
        fd_step: 1e-7,
    };
    let sol = newton_system(
        |z| {
            let x = Vector3::new(z[0], z[1], z[2]);
            let t = z[3];
            let p = [nu, z[4]];
            if t <= 0.0 {
                return Err(Error::EvaluationFailure("negative period".into()));
            }
            let xf = flow_right(model, &p, &x, t, rtol)?;
            Ok(DVector::from_row_slice(&[
                xf[0] - x[0],
                xf[1] - x[1],
                xf[2] - x[2],
                model.lie_derivative(Side::Right, &x, &p),
                model.h(&x, &p),
            ]))
        },
        &z0,
        &ntol,
    )?;
    Ok((Vector3::new(sol[0], sol[1], sol[2]), sol[3], sol[4]))
}

/// Locate the grazing cycle at fixed first parameter `nu`, solving the
/// second parameter so that the right-field limit cycle is tangent to the
/// switching surface at a visible fold.
pub fn find_grazing_cycle(
    model: &FilippovModel,
    nu: f64,
    eta_guess: f64,
    seed: &GrazingSeed,
    tol: &ToleranceConfig,
) -> Result<GrazingCycle> {
    let rtol = 1e-11;
    let (mut anchor, mut period) = match seed {
        GrazingSeed::Cycle { anchor, period } => (*anchor, *period),
        GrazingSeed::Equilibrium(eq_guess) => {
            bootstrap_cycle(model, &[nu, eta_guess], eq_guess, tol, rtol)?
        }
    };

    let solved = grazing_system_solve(model, nu, &anchor, period, eta_guess, rtol).or_else(|_| {
        // fall back to a secant sweep in eta over anchored cycle solves,
        // which has a much larger basin, then polish with the full system
        let mut solve_at =
            |eta: f64, anchor: &mut Vector3<f64>, period: &mut f64| -> Result<f64> {
                let p = [nu, eta];
                let (a, t) = solve_cycle_on_omega(model, &p, anchor, *period, rtol)?;
                *anchor = a;
                *period = t;
                Ok(model.h(&a, &p))
            };
        let mut e0 = eta_guess;
        let mut g0 = solve_at(e0, &mut anchor, &mut period)?;
        let scale = eta_guess.abs().max(1e-3);
        let mut e1 = e0 + 1e-2 * scale * if g0 > 0.0 { 1.0 } else { -1.0 };
        let mut g1 = solve_at(e1, &mut anchor, &mut period)?;
        for _ in 0..40 {
            if g1.abs() < 1e-9 || g1 == g0 {
                break;
            }
            let e2 = e1 - g1 * (e1 - e0) / (g1 - g0);
            e0 = e1;
            g0 = g1;
            e1 = e2;
            g1 = solve_at(e1, &mut anchor, &mut period)?;
            if (e1 - e0).abs() < 1e-14 * e1.abs().max(1e-6) {
                break;
            }
        }
        grazing_system_solve(model, nu, &anchor, period, e1, rtol)
    })?;
    let (mut anchor, mut period, e1) = solved;

    let p = [nu, e1];
    // the anchor must sit on the visible branch of the fold section
    if model.lie_derivative2(&anchor, &p) < 0.0 {
        let (_t, other) = flow_right_to_omega(model, &p, &anchor, period * 0.1, period, rtol)?;
        let re = grazing_system_solve(model, nu, &other, period, e1, rtol)?;
        anchor = re.0;
        period = re.1;
    }
    let l2 = model.lie_derivative2(&anchor, &p);
    if l2 <= 0.0 {
        return Err(Error::NotVisibleFold { value: l2 });
    }
    let h_res = model.h(&anchor, &p).abs();
    let lie_res = model.lie_derivative(Side::Right, &anchor, &p).abs();
    let ret_res = (flow_right(model, &p, &anchor, period, rtol)? - anchor).norm();
    let scale = anchor.norm().max(1.0);
    if h_res > 1e-8 * scale || lie_res > 1e-7 * scale || ret_res > 1e-7 * scale {
        return Err(Error::NoConvergence {
            context: "find_grazing_cycle: residual check".into(),
            iterations: 0,
            residual: h_res.max(ret_res),
        });
    }

    // resample the cycle for diameter estimates and plotting
    let n = 256;
    let mut samples = Vec::with_capacity(n);
    let mut x = anchor;
    let dt = period / n as f64;
    for _ in 0..n {
        samples.push(x);
        x = flow_right(model, &p, &x, dt, rtol)?;
    }

    Ok(GrazingCycle {
        grazing_point: anchor,
        period,
        nu,
        eta_gs: e1,
        cycle_samples: samples,
    })
}

/// A two-coordinate chart on the fold section near a point G, using two
/// state axes as coordinates and solving the section constraint for the
/// third.
#[derive(Debug, Clone)]
pub struct OmegaChart {
    pub origin: Vector3<f64>,
    /// gradient of L_{F_R} H at the origin
    pub normal: Vector3<f64>,
    pub solved_axis: usize,
    pub free_axes: [usize; 2],
}

impl OmegaChart {
    pub fn new(model: &FilippovModel, p: &Params, origin: &Vector3<f64>) -> Result<OmegaChart> {
        let n = model.grad_lie_right(origin, p);
        if n.norm() < 1e-12 {
            return Err(Error::SectionNotTransverse);
        }
        let amax = n[0].abs().max(n[1].abs()).max(n[2].abs());
        // prefer solving the constraint for Y2, the proof's chart, then Y1
        let solved_axis = if n[1].abs() >= 0.499 * amax {
            1
        } else if n[0].abs() >= 0.499 * amax {
            0
        } else {
            2
        };
        let free_axes = match solved_axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        };
        Ok(OmegaChart {
            origin: *origin,
            normal: n,
            solved_axis,
            free_axes,
        })
    }

    pub fn to_chart(&self, x: &Vector3<f64>) -> (f64, f64) {
        (
            x[self.free_axes[0]] - self.origin[self.free_axes[0]],
            x[self.free_axes[1]] - self.origin[self.free_axes[1]],
        )
    }

    pub fn from_chart(
        &self,
        model: &FilippovModel,
        p: &Params,
        s1: f64,
        s2: f64,
    ) -> Result<Vector3<f64>> {
        let mut x = self.origin;
        x[self.free_axes[0]] += s1;
        x[self.free_axes[1]] += s2;
        let k = self.solved_axis;
        for _ in 0..50 {
            let r = model.lie_derivative(Side::Right, &x, p);
            let step = r / self.normal[k];
            x[k] -= step;
            if r.abs() < 1e-14 * self.normal.norm().max(1.0) {
                return Ok(x);
            }
        }
        // refresh the derivative once if plain iteration stalls
        let n = model.grad_lie_right(&x, p);
        for _ in 0..20 {
            let r = model.lie_derivative(Side::Right, &x, p);
            x[k] -= r / n[k];
            if r.abs() < 1e-13 {
                return Ok(x);
            }
        }
        Err(Error::NoConvergence {
            context: "OmegaChart::from_chart".into(),
            iterations: 70,
            residual: model.lie_derivative(Side::Right, &x, p).abs(),
        })
    }

    /// Tangent vectors of the chart axes at the origin.
    pub fn tangents(&self) -> (Vector3<f64>, Vector3<f64>) {
        let k = self.solved_axis;
        let mut t1 = Vector3::zeros();
        t1[self.free_axes[0]] = 1.0;
        t1[k] = -self.normal[self.free_axes[0]] / self.normal[k];
        let mut t2 = Vector3::zeros();
        t2[self.free_axes[1]] = 1.0;
        t2[k] = -self.normal[self.free_axes[1]] / self.normal[k];
        (t1, t2)
    }
}

/// Coefficient vector of the discontinuity-map linear term at a fold.
pub fn disc_map_linear(
    model: &FilippovModel,
    p: &Params,
    fold: &Vector3<f64>,
) -> Result<DiscMapLinear> {
    let n = model.grad_lie_right(fold, p);
    let fl = model.f_left(fold, p);
    let fr = model.f_right(fold, p);
    let lie_l = model.grad_h(fold, p).dot(&fl);
    let lie2 = n.dot(&fr);
    if lie_l.abs() < 1e-12 {
        return Err(Error::DegenerateLie(format!(
            "L_FL H = {lie_l:e} at the fold"
        )));
    }
    if lie2.abs() < 1e-12 {
        return Err(Error::DegenerateLie(format!(
            "L^2_FR H = {lie2:e} at the fold"
        )));
    }
    let lie_l_lie_r = n.dot(&fl);
    let z = fr * (lie_l_lie_r / (lie2 * lie_l)) - fl / lie_l;
    Ok(DiscMapLinear {
        z_field: z,
        fold_point: *fold,
    })
}

/// Apply the linearised discontinuity map `X -> X + Z H(X)` with `Z`
/// evaluated at the fold.
pub fn discontinuity_map_apply(
    model: &FilippovModel,
    p: &Params,
    x1: &Vector3<f64>,
    fold: &Vector3<f64>,
) -> Result<Vector3<f64>> {
    let dm = disc_map_linear(model, p, fold)?;
    dm.apply(model, p, x1)
}

/// Brute-force discontinuity map: flow the right field backwards from a
/// point of the fold section until the switching surface, then slide
/// forwards until returning to the fold section.
pub fn discontinuity_map_exact(
    model: &FilippovModel,
    p: &Params,
    x1: &Vector3<f64>,
    _tol: &ToleranceConfig,
) -> Result<Vector3<f64>> {
    let h1 = model.h(x1, p);
    if h1 > 0.0 {
        return Err(Error::WrongSide { h: h1 });
    }
    if h1 == 0.0 {
        return Ok(*x1);
    }
    let lie2 = model.lie_derivative2(x1, p);
    if lie2 <= 0.0 {
        return Err(Error::NotVisibleFold { value: lie2 });
    }
    // time scale of the excursion
    let t_char = (2.0 * h1.abs() / lie2).sqrt();
    let t_max = 100.0 * t_char;
    let ctrl = StepControl {
        rtol: 1e-12,
        atol: 1e-14,
        h_max: t_char,
        ..StepControl::default()
    };
    let tol = ToleranceConfig::default();

    // backwards under F_R until H = 0
    let mut ev_h = [EventFn {
        g: Box::new(|_t: f64, y: &Vector3<f64>| model.h(y, p)),
        direction: 1,
        arm_band: 0.5 * h1.abs(),
    }];
    let res = integrate_leg(
        |_t, y| -model.f_right(y, p),
        0.0,
        x1,
        t_max,
        &mut ev_h,
        &ctrl,
        &tol,
        1e9,
        |_| {},
        |_, _| {},
    )?;
    let x2 = match res.end {
        LegEnd::Event { y, .. } => y,
        _ => return Err(Error::NoBackwardIntersection),
    };

    // slide forwards until the fold section
    let lie_r_at_x2 = model.lie_derivative(Side::Right, &x2, p);
    let mut ev = vec![
        EventFn {
            g: Box::new(|_t: f64, y: &Vector3<f64>| model.lie_derivative(Side::Right, y, p)),
            direction: 1,
            arm_band: 0.5 * lie_r_at_x2.abs(),
        },
        EventFn {
            g: Box::new(|_t: f64, y: &Vector3<f64>| model.lie_derivative(Side::Left, y, p)),
            direction: -1,
            arm_band: 1e-12,
        },
    ];
    let res = integrate_leg(
        |_t, y| match sliding_field_unchecked(model, y, p) {
            Ok(s) => s.velocity,
            Err(_) => Vector3::repeat(f64::NAN),
        },
        0.0,
        &x2,
        t_max,
        &mut ev,
        &ctrl,
        &tol,
        1e9,
        |y| {
            for _ in 0..2 {
                let h = model.h(y, p);
                let g = model.grad_h(y, p);
                let gg = g.norm_squared();
                if gg > 0.0 {
                    *y -= g * (h / gg);
                }
            }
        },
        |_, _| {},
    )?;
    match res.end {
        LegEnd::Event { index: 0, y, .. } => Ok(y),
        LegEnd::Event { index: 1, .. } => Err(Error::SlidingExitBeforeOmega),
        _ => Err(Error::SlidingExitBeforeOmega),
    }
}

/// Log-log regression slope of |linearised - exact| discontinuity-map
/// discrepancy against perturbation size, averaged over a fan of chart
/// directions on the surface side of the fold. The remainder term of the
/// linearisation has exponent 3/2.
pub fn discontinuity_scaling_slope(
    model: &FilippovModel,
    grazing: &GrazingCycle,
    eps_list: &[f64],
    n_dirs: usize,
    tol: &ToleranceConfig,
) -> Result<f64> {
    let p = grazing.params();
    let g = grazing.grazing_point;
    let chart = OmegaChart::new(model, &p, &g)?;
    let disc = disc_map_linear(model, &p, &g)?;
    let (t1, t2) = chart.tangents();
    let grad_h = model.grad_h(&g, &p);
    let gh = nalgebra::Vector2::new(grad_h.dot(&t1), grad_h.dot(&t2));
    let ghn = gh / gh.norm();
    let perp = nalgebra::Vector2::new(-ghn[1], ghn[0]);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &eps in eps_list {
        let mut total = 0.0;
        let mut used = 0usize;
        for k in 0..n_dirs {
            let theta =
                -0.45 * std::f64::consts::PI + 0.9 * std::f64::consts::PI * (k as f64 + 0.5)
                    / n_dirs as f64;
            let dir = -ghn * theta.cos() + perp * theta.sin();
            let x1 = chart.from_chart(model, &p, eps * dir[0], eps * dir[1])?;
            if model.h(&x1, &p) >= 0.0 {
                continue;
            }
            let lin = disc.apply(model, &p, &x1)?;
            let exact = discontinuity_map_exact(model, &p, &x1, tol)?;
            total += (lin - exact).norm();
            used += 1;
        }
        if used == 0 {
            continue;
        }
        xs.push(eps.ln());
        ys.push((total / used as f64).ln());
    }
    if xs.len() < 2 {
        return Err(Error::EvaluationFailure(
            "discontinuity_scaling_slope: not enough usable samples".into(),
        ));
    }
    // least-squares slope
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    Ok(sxy / sxx)
}

/// Closed-form derivative of the global return map in blown-up Jordan
/// coordinates, at the grazing point and in the codimension-two limit.
pub fn dq_global_limit(a: f64, b: f64, c: f64, beta0: f64, gamma0: f64) -> Matrix2<f64> {
    let k = (2.0 * std::f64::consts::PI * gamma0 / beta0).exp();
    Matrix2::new(
        1.0,
        -b * c * gamma0 / ((a * a + b * b) * beta0) * (1.0 - k),
        0.0,
        k,
    )
}

/// Closed-form derivative of the discontinuity map in blown-up Jordan
/// coordinates; `(p, q, r)` is the left-field direction in those
/// coordinates.
pub fn dq_disc_limit(
    a: f64,
    b: f64,
    c: f64,
    p: f64,
    q: f64,
    r: f64,
    beta0: f64,
    gamma0: f64,
) -> Result<Matrix2<f64>> {
    if a.abs() < 1e-14 {
        return Err(Error::DegenerateDenominator("dq_disc_limit: a".into()));
    }
    let den = a * p + b * q + c * r;
    if den.abs() < 1e-14 {
        return Err(Error::DegenerateDenominator(
            "dq_disc_limit: a p + b q + c r".into(),
        ));
    }
    let top = (a * beta0 - b * gamma0) * c;
    let m11 = top * r / (a * beta0 * den);
    let m12 = -top / (beta0 * (a * a + b * b) * den)
        * (a * p + b * q + b * c * r * gamma0 / (a * beta0));
    let m21 = -(a * a + b * b) * r / (a * den);
    let m22 = 1.0 - m11;
    Ok(Matrix2::new(m11, m12, m21, m22))
}

/// How the Poincare section for parameter extraction is chosen.
#[derive(Debug, Clone, Copy)]
pub enum SectionSpec {
    /// Differentiate the return map directly on the fold section.
    OmegaChart,
    /// Use a transverse plane anchored at the cycle point a given fraction
    /// of the period downstream of the grazing point.
    Plane { phase: f64 },
}

/// Normal-form parameters plus the matrices they came from.
#[derive(Debug, Clone)]
pub struct NfExtraction {
    pub params: NormalFormParams,
    pub dq_global: Matrix2<f64>,
    pub dq_disc: Matrix2<f64>,
    pub disc: DiscMapLinear,
}

/// Derivative of the fold-section return map of the right field by central
/// differences in a chart on the section.
pub fn dq_global_fd(
    model: &FilippovModel,
    p: &Params,
    chart: &OmegaChart,
    period: f64,
    fd_step: f64,
) -> Result<Matrix2<f64>> {
    let rtol = 1e-12;
    let ret = |s1: f64, s2: f64| -> Result<(f64, f64)> {
        let x = chart.from_chart(model, p, s1, s2)?;
        let (_t, xe) = flow_right_to_omega(model, p, &x, 0.55 * period, 3.0 * period, rtol)?;
        Ok(chart.to_chart(&xe))
    };
    let d = fd_step;
    let (xp1, yp1) = ret(d, 0.0)?;
    let (xm1, ym1) = ret(-d, 0.0)?;
    let (xp2, yp2) = ret(0.0, d)?;
    let (xm2, ym2) = ret(0.0, -d)?;
    Ok(Matrix2::new(
        (xp1 - xm1) / (2.0 * d),
        (xp2 - xm2) / (2.0 * d),
        (yp1 - ym1) / (2.0 * d),
        (yp2 - ym2) / (2.0 * d),
    ))
}

/// Derivative of the linearised discontinuity map restricted to the fold
/// section, in the same chart as `dq_global_fd`.
pub fn dq_disc_chart(
    model: &FilippovModel,
    p: &Params,
    chart: &OmegaChart,
    disc: &DiscMapLinear,
) -> Matrix2<f64> {
    let (t1, t2) = chart.tangents();
    let grad_h = model.grad_h(&chart.origin, p);
    let h1 = grad_h.dot(&t1);
    let h2 = grad_h.dot(&t2);
    let z = &disc.z_field;
    let f = chart.free_axes;
    Matrix2::new(
        1.0 + z[f[0]] * h1,
        z[f[0]] * h2,
        z[f[1]] * h1,
        1.0 + z[f[1]] * h2,
    )
}

fn plane_route(
    model: &FilippovModel,
    grazing: &GrazingCycle,
    phase: f64,
    disc: &DiscMapLinear,
    omega_chart: &OmegaChart,
    fd_step: f64,
) -> Result<NfExtraction> {
    let p = grazing.params();
    let rtol = 1e-12;
    let period = grazing.period;
    // anchor the plane at the cycle point `phase` of a period downstream
    let anchor = flow_right(model, &p, &grazing.grazing_point, phase * period, rtol)?;
    let normal = model.f_right(&anchor, &p);
    if normal.norm() < 1e-12 {
        return Err(Error::SectionNotTransverse);
    }
    let normal = normal.normalize();
    // orthonormal in-plane axes
    let seed = if normal[0].abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = (seed - normal * normal.dot(&seed)).normalize();
    let e2 = normal.cross(&e1);

    let to_plane = |x: &Vector3<f64>| ((x - anchor).dot(&e1), (x - anchor).dot(&e2));
    let from_plane = |s1: f64, s2: f64| anchor + e1 * s1 + e2 * s2;

    // flow to the plane crossing in the flow direction after t_skip
    let flow_to_plane = |x0: &Vector3<f64>, t_skip: f64| -> Result<Vector3<f64>> {
        let x_start = if t_skip > 0.0 {
            flow_right(model, &p, x0, t_skip, rtol)?
        } else {
            *x0
        };
        let mut ev = [EventFn {
            g: Box::new(|_t: f64, y: &Vector3<f64>| normal.dot(&(y - anchor))),
            direction: 1,
            arm_band: 1e-9 * grazing.diameter(),
        }];
        let res = integrate_leg(
            |_t, y| model.f_right(y, &p),
            0.0,
            &x_start,
            3.0 * period,
            &mut ev,
            &StepControl {
                rtol,
                atol: rtol * 1e-2,
                ..StepControl::default()
            },
            &ToleranceConfig::default(),
            1e9,
            |_| {},
            |_, _| {},
        )?;
        match res.end {
            LegEnd::Event { y, .. } => Ok(y),
            _ => Err(Error::SectionNotTransverse),
        }
    };

    // Q_in: plane -> fold section; Q_out: fold section -> plane
    let q_in = |s1: f64, s2: f64| -> Result<(f64, f64)> {
        let x = from_plane(s1, s2);
        let (_t, xe) = flow_right_to_omega(
            model,
            &p,
            &x,
            (1.0 - phase) * period * 0.5,
            3.0 * period,
            rtol,
        )?;
        Ok(omega_chart.to_chart(&xe))
    };
    let q_out = |s1: f64, s2: f64| -> Result<(f64, f64)> {
        let x = omega_chart.from_chart(model, &p, s1, s2)?;
        let xe = flow_to_plane(&x, phase * period * 0.5)?;
        Ok(to_plane(&xe))
    };

    let fd2 = |f: &dyn Fn(f64, f64) -> Result<(f64, f64)>, d: f64| -> Result<Matrix2<f64>> {
        let (xp1, yp1) = f(d, 0.0)?;
        let (xm1, ym1) = f(-d, 0.0)?;
        let (xp2, yp2) = f(0.0, d)?;
        let (xm2, ym2) = f(0.0, -d)?;
        Ok(Matrix2::new(
            (xp1 - xm1) / (2.0 * d),
            (xp2 - xm2) / (2.0 * d),
            (yp1 - ym1) / (2.0 * d),
            (yp2 - ym2) / (2.0 * d),
        ))
    };
    let dq_in = fd2(&q_in, fd_step)?;
    let dq_out = fd2(&q_out, fd_step)?;
    let dq_disc = dq_disc_chart(model, &p, omega_chart, disc);

    let dq_r = dq_out * dq_in;
    let dq_l = dq_out * dq_disc * dq_in;
    Ok(NfExtraction {
        params: NormalFormParams {
            tau_l: dq_l.trace(),
            delta_l: dq_l.determinant(),
            tau_r: dq_r.trace(),
            delta_r: dq_r.determinant(),
            mu_side: MuSide::AfterGrazing,
        },
        dq_global: dq_r,
        dq_disc,
        disc: disc.clone(),
    })
}

/// Extract the border-collision normal-form parameters at a grazing cycle:
/// the trace and determinant of the smooth return-map derivative, and of
/// its composition with the discontinuity-map derivative.
pub fn normal_form_params(
    model: &FilippovModel,
    grazing: &GrazingCycle,
    section: SectionSpec,
    _tol: &ToleranceConfig,
) -> Result<NfExtraction> {
    let p = grazing.params();
    let g = grazing.grazing_point;
    let chart = OmegaChart::new(model, &p, &g)?;
    let disc = disc_map_linear(model, &p, &g)?;
    let fd_step = 1e-5 * grazing.diameter().max(1e-6);
    match section {
        SectionSpec::OmegaChart => {
            let dq_global = dq_global_fd(model, &p, &chart, grazing.period, fd_step)?;
            let dq_disc = dq_disc_chart(model, &p, &chart, &disc);
            let dq_l = dq_global * dq_disc;
            Ok(NfExtraction {
                params: NormalFormParams {
                    tau_l: dq_l.trace(),
                    delta_l: dq_l.determinant(),
                    tau_r: dq_global.trace(),
                    delta_r: dq_global.determinant(),
                    mu_side: MuSide::AfterGrazing,
                },
                dq_global,
                dq_disc,
                disc,
            })
        }
        SectionSpec::Plane { phase } => {
            plane_route(model, grazing, phase, &disc, &chart, fd_step)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary_hopf::theorem1_limits;
    use crate::model_io::builtins::toy_model;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    /// Blown-up Jordan-coordinate model: linear right field, constant left
    /// field, affine switching function.
    pub(crate) fn jordan_model(
        a: f64,
        b: f64,
        c: f64,
        p: f64,
        q: f64,
        r: f64,
        beta0: f64,
        gamma0: f64,
        psi: f64,
    ) -> FilippovModel {
        let fr = Arc::new(move |x: &Vector3<f64>, _p: &Params| {
            Vector3::new(beta0 * x[1], -beta0 * x[0], gamma0 * x[2])
        });
        let fl = Arc::new(move |_x: &Vector3<f64>, _p: &Params| Vector3::new(p, q, r));
        let h = Arc::new(move |x: &Vector3<f64>, _p: &Params| {
            a * x[0] + b * x[1] + c * x[2] + psi
        });
        let grad = Arc::new(move |_x: &Vector3<f64>, _p: &Params| Vector3::new(a, b, c));
        FilippovModel::new("jordan-blowup", ["nu", "eta"], fl, fr, h).with_grad_h(grad)
    }

    fn toy_jordan() -> FilippovModel {
        // toy data: T = I so (a,b,c) = u, (p,q,r) = d, psi = 1
        jordan_model(-1.0, -2.0, -3.0, 0.0, -2.0, 1.0, 1.0, -0.2, 1.0)
    }

    const TOY_A: f64 = -1.0;
    const TOY_B: f64 = -2.0;
    const TOY_C: f64 = -3.0;

    fn toy_grazing_point() -> Vector3<f64> {
        // G = -psi/(a^2+b^2) (a, b, 0)
        Vector3::new(0.2, 0.4, 0.0)
    }

    #[test]
    fn dq_global_limit_toy_values() {
        let m = dq_global_limit(TOY_A, TOY_B, TOY_C, 1.0, -0.2);
        let k = (-0.4 * std::f64::consts::PI).exp();
        assert_abs_diff_eq!(m[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 1)], 0.24 * (1.0 - k), epsilon = 1e-15);
        assert_abs_diff_eq!(m[(0, 1)], 0.171_693_7, epsilon = 1e-6);
        assert_abs_diff_eq!(m[(1, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(m[(1, 1)], k, epsilon = 1e-15);
    }

    #[test]
    fn dq_global_limit_degenerate_cases() {
        let m = dq_global_limit(1.0, 2.0, 0.0, 1.5, -0.3);
        assert_abs_diff_eq!(m[(0, 1)], 0.0, epsilon = 1e-15);
        let m = dq_global_limit(1.0, 2.0, 3.0, 1.5, 0.0);
        assert!((m - Matrix2::identity()).norm() < 1e-15);
    }

    #[test]
    fn dq_disc_limit_toy_values() {
        let m = dq_disc_limit(TOY_A, TOY_B, TOY_C, 0.0, -2.0, 1.0, 1.0, -0.2).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], -4.2, epsilon = 1e-12);
        assert_abs_diff_eq!(m[(0, 1)], -4.368, epsilon = 1e-12);
        assert_abs_diff_eq!(m[(1, 0)], 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m[(1, 1)], 5.2, epsilon = 1e-12);
        assert_abs_diff_eq!(m.determinant(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn dq_disc_limit_r_zero_structure() {
        // with r = 0 the correction acts only within the oscillation
        // plane: the first column vanishes, the (2,2) entry stays 1, and
        // tau_L collapses to the Floquet factor
        let m = dq_disc_limit(1.0, 2.0, 3.0, 0.5, -0.5, 0.0, 1.0, -0.2).unwrap();
        assert_abs_diff_eq!(m[(0, 0)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(1, 0)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[(1, 1)], 1.0, epsilon = 1e-14);
        let dqg = dq_global_limit(1.0, 2.0, 3.0, 1.0, -0.2);
        let tau_l = (dqg * m).trace();
        // trace of the product collapses to the Floquet factor
        assert_abs_diff_eq!(tau_l, (-0.4 * std::f64::consts::PI).exp(), epsilon = 1e-12);
    }

    #[test]
    fn composition_identity_matches_theorem_limits() {
        let dqg = dq_global_limit(TOY_A, TOY_B, TOY_C, 1.0, -0.2);
        let dqd = dq_disc_limit(TOY_A, TOY_B, TOY_C, 0.0, -2.0, 1.0, 1.0, -0.2).unwrap();
        let prod = dqg * dqd;
        let lim = theorem1_limits(
            &Vector3::new(-1.0, -2.0, -3.0),
            &Vector3::new(0.0, -2.0, 1.0),
            &Vector3::z(),
            &Vector3::z(),
            1.0,
            -0.2,
        )
        .unwrap();
        assert_abs_diff_eq!(prod.trace(), lim.tau_l0, epsilon = 1e-10);
        assert!(prod.determinant().abs() <= 1e-12);
    }

    #[test]
    fn z_field_matches_closed_form_on_jordan_model() {
        // first/third components of Z at the fold reproduce the appendix
        // closed form; frozen independent evaluation gives (1.04, 1.48, -1)
        let m = toy_jordan();
        let g = toy_grazing_point();
        let dm = disc_map_linear(&m, &[0.0, 0.0], &g).unwrap();
        assert_abs_diff_eq!(dm.z_field[0], 1.04, epsilon = 1e-9);
        assert_abs_diff_eq!(dm.z_field[1], 1.48, epsilon = 1e-9);
        assert_abs_diff_eq!(dm.z_field[2], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn chart_disc_derivative_matches_closed_form() {
        let m = toy_jordan();
        let p = [0.0, 0.0];
        let g = toy_grazing_point();
        let chart = OmegaChart::new(&m, &p, &g).unwrap();
        assert_eq!(chart.solved_axis, 1);
        assert_eq!(chart.free_axes, [0, 2]);
        let disc = disc_map_linear(&m, &p, &g).unwrap();
        let dq = dq_disc_chart(&m, &p, &chart, &disc);
        let oracle = dq_disc_limit(TOY_A, TOY_B, TOY_C, 0.0, -2.0, 1.0, 1.0, -0.2).unwrap();
        assert!((dq - oracle).norm() < 1e-8, "dq = {dq}, oracle = {oracle}");
    }

    #[test]
    fn fd_global_derivative_matches_closed_form_on_jordan_model() {
        let m = toy_jordan();
        let p = [0.0, 0.0];
        let g = toy_grazing_point();
        let chart = OmegaChart::new(&m, &p, &g).unwrap();
        let period = 2.0 * std::f64::consts::PI;
        let dq = dq_global_fd(&m, &p, &chart, period, 1e-5).unwrap();
        let oracle = dq_global_limit(TOY_A, TOY_B, TOY_C, 1.0, -0.2);
        assert!(
            (dq - oracle).norm() < 1e-6,
            "dq = {dq}, oracle = {oracle}"
        );
    }

    #[test]
    fn toy_grazing_cycle_at_nu_04() {
        let m = toy_model();
        let gc = find_grazing_cycle(
            &m,
            0.4,
            0.15 * 0.16,
            &GrazingSeed::Equilibrium(Vector3::zeros()),
            &tol(),
        )
        .unwrap();
        // frozen from an independent implementation of the same shooting
        // problem (secant residual < 1e-11)
        assert_abs_diff_eq!(gc.eta_gs, 0.024_123_24, epsilon = 1e-6);
        assert_abs_diff_eq!(gc.period, 6.283_414, epsilon = 1e-4);
        let p = gc.params();
        assert!(m.h(&gc.grazing_point, &p).abs() < 1e-9);
        assert!(m.lie_derivative(Side::Right, &gc.grazing_point, &p).abs() < 1e-9);
        assert!(m.lie_derivative2(&gc.grazing_point, &p) > 0.0);
        // flowing one period returns to the grazing point
        let xf = flow_right(&m, &p, &gc.grazing_point, gc.period, 1e-11).unwrap();
        assert!((xf - gc.grazing_point).norm() < 1e-8);
    }

    #[test]
    fn grazing_curve_is_quadratically_tangent() {
        let m = toy_model();
        let mut seed = GrazingSeed::Equilibrium(Vector3::zeros());
        let mut ratios = vec![];
        for nu in [0.1, 0.05] {
            let gc = find_grazing_cycle(&m, nu, 0.15 * nu * nu, &seed, &tol()).unwrap();
            ratios.push(gc.eta_gs / (nu * nu));
            seed = GrazingSeed::Cycle {
                anchor: gc.grazing_point,
                period: gc.period,
            };
        }
        // eta_gs / nu^2 tends to a constant: zero slope at the origin
        assert!((ratios[0] - ratios[1]).abs() < 0.01 * ratios[0].abs());
        assert_abs_diff_eq!(ratios[1], 0.150, epsilon = 5e-3);
    }

    #[test]
    fn toy_nf_params_at_nu_02() {
        let m = toy_model();
        let gc = find_grazing_cycle(
            &m,
            0.2,
            0.006,
            &GrazingSeed::Equilibrium(Vector3::zeros()),
            &tol(),
        )
        .unwrap();
        let nf = normal_form_params(&m, &gc, SectionSpec::OmegaChart, &tol()).unwrap();
        // frozen from an independent implementation (same chart, fd step)
        assert_abs_diff_eq!(nf.params.tau_l, -1.750_433, epsilon = 5e-4);
        assert_abs_diff_eq!(nf.params.tau_r, 1.247_565, epsilon = 5e-4);
        assert_abs_diff_eq!(nf.params.delta_r, 0.274_066, epsilon = 5e-4);
        assert!(nf.params.delta_l.abs() < 1e-8);
    }

    #[test]
    fn section_independence_of_traces() {
        let m = toy_model();
        let gc = find_grazing_cycle(
            &m,
            0.3,
            0.0135,
            &GrazingSeed::Equilibrium(Vector3::zeros()),
            &tol(),
        )
        .unwrap();
        let a = normal_form_params(&m, &gc, SectionSpec::OmegaChart, &tol()).unwrap();
        let b = normal_form_params(&m, &gc, SectionSpec::Plane { phase: 0.3 }, &tol()).unwrap();
        let c = normal_form_params(&m, &gc, SectionSpec::Plane { phase: 0.6 }, &tol()).unwrap();
        for other in [&b, &c] {
            assert!(
                (a.params.tau_l - other.params.tau_l).abs() < 1e-6 * a.params.tau_l.abs(),
                "tau_l: {} vs {}",
                a.params.tau_l,
                other.params.tau_l
            );
            assert!((a.params.tau_r - other.params.tau_r).abs() < 1e-6 * a.params.tau_r.abs());
            assert!((a.params.delta_r - other.params.delta_r).abs()
                < 1e-6 * a.params.delta_r.abs());
        }
    }

    #[test]
    fn discontinuity_map_apply_identity_at_surface() {
        let m = toy_jordan();
        let p = [0.0, 0.0];
        let g = toy_grazing_point();
        let out = discontinuity_map_apply(&m, &p, &g, &g).unwrap();
        assert!((out - g).norm() < 1e-14);
    }

    #[test]
    fn discontinuity_map_wrong_side_is_rejected() {
        let m = toy_jordan();
        let p = [0.0, 0.0];
        let g = toy_grazing_point();
        let x1 = Vector3::new(g[0] - 0.05, g[1], g[2] + 0.05);
        if m.h(&x1, &p) > 0.0 {
            let e = discontinuity_map_apply(&m, &p, &x1, &g).unwrap_err();
            assert_eq!(e.kind(), "WrongSide");
        } else {
            let e = discontinuity_map_apply(&m, &p, &(g + Vector3::new(-0.1, 0.0, 0.0)), &g);
            assert!(e.is_err() || m.h(&(g + Vector3::new(-0.1, 0.0, 0.0)), &p) <= 0.0);
        }
    }

    #[test]
    fn exact_map_agrees_with_linear_correction_at_three_halves_order() {
        let m = toy_model();
        let gc = find_grazing_cycle(
            &m,
            0.3,
            0.0135,
            &GrazingSeed::Equilibrium(Vector3::zeros()),
            &tol(),
        )
        .unwrap();
        let p = gc.params();
        let g = gc.grazing_point;
        let chart = OmegaChart::new(&m, &p, &g).unwrap();
        let (t1, t2) = chart.tangents();
        let grad_h = m.grad_h(&g, &p);
        // chart direction that decreases H
        let gh = nalgebra::Vector2::new(grad_h.dot(&t1), grad_h.dot(&t2));
        let dir = -gh / gh.norm();
        let mut diffs = vec![];
        let eps_list = [1e-2, 1e-3, 1e-4];
        for eps in eps_list {
            let x1 = chart
                .from_chart(&m, &p, eps * dir[0], eps * dir[1])
                .unwrap();
            let a = discontinuity_map_apply(&m, &p, &x1, &g).unwrap();
            let e = discontinuity_map_exact(&m, &p, &x1, &tol()).unwrap();
            diffs.push((a - e).norm());
        }
        // successive decades should shrink by more than 10^1.2
        for w in diffs.windows(2) {
            let ratio = w[0] / w[1];
            assert!(ratio > 10f64.powf(1.2), "ratio {ratio}");
        }
    }
}
