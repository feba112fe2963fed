//! Continuation of the codimension-one curves of the unfolding (Hopf,
//! boundary-equilibrium, grazing-sliding, period-doubling) over the
//! two-parameter plane, plus one-parameter attractor sweeps.
//!
//! All curves are traced by natural-parameter stepping with Newton or
//! secant correction and warm starts; the step is halved on failure.

use crate::boundary_hopf::{equilibrium_eigen, BebType};
use crate::error::{Error, Result};
use crate::filippov::{
    integrate_hybrid_opts, FilippovModel, IntegrateOptions, Params, Section,
};
use crate::grazing::{
    find_grazing_cycle, flow_right, normal_form_params, GrazingCycle, GrazingSeed,
    NormalFormParams, OmegaChart, SectionSpec,
};
use crate::numerics::{fd_jacobian, ToleranceConfig};
use nalgebra::{Complex, DVector, Matrix2, Matrix3, Vector3};
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum CurveKind {
    Hopf,
    Beb,
    GrazingSliding,
    PeriodDoubling,
}

impl CurveKind {
    pub fn label(&self) -> &'static str {
        match self {
            CurveKind::Hopf => "Hopf",
            CurveKind::Beb => "BEB",
            CurveKind::GrazingSliding => "GrazingSliding",
            CurveKind::PeriodDoubling => "PeriodDoubling",
        }
    }
}

#[derive(Debug, Clone)]
pub enum CurvePayload {
    Equilibrium {
        x: Vector3<f64>,
        beb_type: Option<BebType>,
    },
    Cycle {
        anchor: Vector3<f64>,
        period: f64,
    },
    Grazing {
        grazing_point: Vector3<f64>,
        period: f64,
        nf: NormalFormParams,
        /// fixed-point admissibility test delta_R > tau_R - 1
        stable_by_nf: bool,
        /// nontrivial Floquet multipliers inside the unit circle
        stable_by_floquet: bool,
    },
}

#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub params: [f64; 2],
    pub residual: f64,
    pub payload: CurvePayload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum MarkerKind {
    BoundaryHopf,
    TauLPlusOne,
    TauLMinusOne,
    BebTypeChange,
}

impl MarkerKind {
    pub fn label(&self) -> &'static str {
        match self {
            MarkerKind::BoundaryHopf => "BoundaryHopf",
            MarkerKind::TauLPlusOne => "TauL=+1",
            MarkerKind::TauLMinusOne => "TauL=-1",
            MarkerKind::BebTypeChange => "BebTypeChange",
        }
    }
}

#[derive(Debug, Clone)]
pub struct CurveMarker {
    /// index of the curve point just before the marker
    pub index: usize,
    pub kind: MarkerKind,
    pub params: [f64; 2],
}

#[derive(Debug, Clone)]
pub struct BifurcationCurve {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
    pub markers: Vec<CurveMarker>,
}

impl BifurcationCurve {
    /// CSV export: param1, param2, kind, residual, markers (plus the
    /// normal-form columns on grazing-sliding curves).
    pub fn to_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        let gs = matches!(self.kind, CurveKind::GrazingSliding);
        if gs {
            writeln!(
                w,
                "param1,param2,kind,residual,markers,tau_L,tau_R,delta_R,delta_L,stable"
            )?;
        } else {
            writeln!(w, "param1,param2,kind,residual,markers")?;
        }
        for (i, pt) in self.points.iter().enumerate() {
            let marks: Vec<&str> = self
                .markers
                .iter()
                .filter(|m| m.index == i)
                .map(|m| m.kind.label())
                .collect();
            let marks = marks.join("|");
            match &pt.payload {
                CurvePayload::Grazing { nf, stable_by_floquet, .. } if gs => {
                    writeln!(
                        w,
                        "{:.16e},{:.16e},{},{:.3e},{},{:.16e},{:.16e},{:.16e},{:.16e},{}",
                        pt.params[0],
                        pt.params[1],
                        self.kind.label(),
                        pt.residual,
                        marks,
                        nf.tau_l,
                        nf.tau_r,
                        nf.delta_r,
                        nf.delta_l,
                        stable_by_floquet,
                    )?;
                }
                _ => {
                    writeln!(
                        w,
                        "{:.16e},{:.16e},{},{:.3e},{}",
                        pt.params[0],
                        pt.params[1],
                        self.kind.label(),
                        pt.residual,
                        marks
                    )?;
                }
            }
        }
        Ok(())
    }
}

/// All roots of the characteristic polynomial of a 3x3 matrix.
fn eigenvalues3(m: &Matrix3<f64>) -> [Complex<f64>; 3] {
    let tr = m.trace();
    let m2 = (m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)])
        + (m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)])
        + (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)]);
    let det = m.determinant();
    // lambda^3 + c2 l^2 + c1 l + c0
    let (c2, c1, c0) = (-tr, m2, -det);
    let p = c1 - c2 * c2 / 3.0;
    let q = 2.0 * c2.powi(3) / 27.0 - c2 * c1 / 3.0 + c0;
    let shift = -c2 / 3.0;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    if disc > 0.0 {
        let sq = disc.sqrt();
        let big = if q <= 0.0 { -q / 2.0 + sq } else { -q / 2.0 - sq };
        let a = big.cbrt();
        let b = if a != 0.0 { -p / (3.0 * a) } else { 0.0 };
        let t1 = a + b;
        let re = -t1 / 2.0;
        let im = (3.0f64.sqrt() / 2.0) * (a - b).abs();
        [
            Complex::new(t1 + shift, 0.0),
            Complex::new(re + shift, im),
            Complex::new(re + shift, -im),
        ]
    } else {
        // three real roots (trigonometric form)
        let rho = (-p / 3.0).max(0.0).sqrt();
        let arg = if rho == 0.0 {
            0.0
        } else {
            (-q / (2.0 * rho.powi(3))).clamp(-1.0, 1.0)
        };
        let phi = arg.acos();
        let mut out = [Complex::new(0.0, 0.0); 3];
        for (k, o) in out.iter_mut().enumerate() {
            let t = 2.0 * rho * ((phi - 2.0 * std::f64::consts::PI * k as f64) / 3.0).cos();
            *o = Complex::new(t + shift, 0.0);
        }
        out
    }
}

fn adaptive_sweep<F>(
    from: f64,
    to: f64,
    steps: usize,
    mut solve: F,
) -> Result<()>
where
    F: FnMut(f64) -> Result<()>,
{
    let n = steps.max(1);
    let base = (to - from) / n as f64;
    let mut x = from;
    solve(x)?;
    let mut step = base;
    let done = |x: f64| {
        if base > 0.0 {
            x >= to - 1e-14 * to.abs().max(1.0)
        } else {
            x <= to + 1e-14 * to.abs().max(1.0)
        }
    };
    let mut halvings = 0;
    while !done(x) {
        let mut next = x + step;
        if (base > 0.0 && next > to) || (base < 0.0 && next < to) {
            next = to;
        }
        match solve(next) {
            Ok(()) => {
                x = next;
                if halvings > 0 {
                    halvings -= 1;
                    step = (step * 2.0).clamp(-base.abs().max(step.abs()), base.abs());
                    if base < 0.0 {
                        step = -step.abs();
                    } else {
                        step = step.abs();
                    }
                }
            }
            Err(e) => {
                halvings += 1;
                if halvings > 6 {
                    return Err(e);
                }
                step *= 0.5;
            }
        }
    }
    Ok(())
}

/// Scalar secant solve with warm start, used for the parameter corrections.
fn secant<F>(mut f: F, x0: f64, dx: f64, f_tol: f64, max_iter: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let mut a = x0;
    let mut fa = f(a)?;
    if fa.abs() <= f_tol {
        return Ok(a);
    }
    let mut b = x0 + dx;
    let mut fb = f(b)?;
    for _ in 0..max_iter {
        if fb.abs() <= f_tol {
            return Ok(b);
        }
        if fb == fa {
            break;
        }
        let c = b - fb * (b - a) / (fb - fa);
        a = b;
        fa = fb;
        b = c;
        fb = f(b)?;
        if (b - a).abs() <= 1e-14 * b.abs().max(1.0) {
            break;
        }
    }
    if fb.abs() <= f_tol * 100.0 {
        Ok(b)
    } else {
        Err(Error::NoConvergence {
            context: "secant".into(),
            iterations: max_iter,
            residual: fb.abs(),
        })
    }
}

/// Continue the Hopf condition `alpha(p1, p2) = 0`, sweeping the first
/// parameter and solving the second.
pub fn trace_hopf_curve(
    model: &FilippovModel,
    start_params: &Params,
    eq_guess: &Vector3<f64>,
    range: (f64, f64),
    steps: usize,
    tol: &ToleranceConfig,
) -> Result<BifurcationCurve> {
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut eq = *eq_guess;
    let mut p2 = start_params[1];
    // validate that the start is a genuine Hopf candidate
    let (_, eig0) = equilibrium_eigen(model, &[range.0, p2], &eq, tol)?;
    if eig0.beta <= tol.abs_tol.sqrt() {
        return Err(Error::DegenerateSpectrum(
            "trace_hopf_curve: nearly real spectrum at the start point".into(),
        ));
    }
    adaptive_sweep(range.0, range.1, steps, |p1| {
        let eq_cell = std::cell::RefCell::new(eq);
        let solved = secant(
            |p2c| {
                let (e, eg) = equilibrium_eigen(model, &[p1, p2c], &eq_cell.borrow(), tol)
                    .map_err(|err| match err {
                        Error::NoConvergence { .. } => Error::LostEquilibrium {
                            param: model.param_names[0].clone(),
                            value: p1,
                        },
                        other => other,
                    })?;
                *eq_cell.borrow_mut() = e;
                Ok(eg.alpha)
            },
            p2,
            1e-4 * p2.abs().max(1.0),
            1e-11,
            40,
        )?;
        eq = *eq_cell.borrow();
        p2 = solved;
        let (e, eg) = equilibrium_eigen(model, &[p1, p2], &eq, tol)?;
        points.push(CurvePoint {
            params: [p1, p2],
            residual: eg.alpha.abs(),
            payload: CurvePayload::Equilibrium {
                x: e,
                beb_type: None,
            },
        });
        Ok(())
    })?;
    Ok(BifurcationCurve {
        kind: CurveKind::Hopf,
        points,
        markers: vec![],
    })
}

/// Continue the boundary-equilibrium condition `H(X*(p)) = 0`, sweeping
/// the second parameter and solving the first; each point is annotated
/// persistence / nonsmooth-fold.
pub fn trace_beb_curve(
    model: &FilippovModel,
    start_params: &Params,
    eq_guess: &Vector3<f64>,
    range: (f64, f64),
    steps: usize,
    tol: &ToleranceConfig,
) -> Result<BifurcationCurve> {
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut markers: Vec<CurveMarker> = Vec::new();
    let mut eq = *eq_guess;
    let mut p1 = start_params[0];
    adaptive_sweep(range.0, range.1, steps, |p2| {
        let eq_cell = std::cell::RefCell::new(eq);
        let solved = secant(
            |p1c| {
                let (e, _) = equilibrium_eigen(model, &[p1c, p2], &eq_cell.borrow(), tol)
                    .map_err(|err| match err {
                        Error::NoConvergence { .. } => Error::LostEquilibrium {
                            param: model.param_names[1].clone(),
                            value: p2,
                        },
                        other => other,
                    })?;
                *eq_cell.borrow_mut() = e;
                Ok(model.h(&e, &[p1c, p2]))
            },
            p1,
            1e-4 * p1.abs().max(1.0),
            1e-11,
            40,
        )?;
        eq = *eq_cell.borrow();
        p1 = solved;
        let p = [p1, p2];
        let (e, _) = equilibrium_eigen(model, &p, &eq, tol)?;
        let u = model.grad_h(&e, &p);
        let d = model.f_left(&e, &p);
        let m_r = model.jac_right(&e, &p);
        let beb = m_r.lu().solve(&d).map(|mid| {
            if u.dot(&mid) < 0.0 {
                BebType::Persistence
            } else {
                BebType::NonsmoothFold
            }
        });
        if let (Some(new_t), Some(CurvePoint {
            payload: CurvePayload::Equilibrium {
                beb_type: Some(prev_t),
                ..
            },
            ..
        })) = (beb, points.last())
        {
            if new_t != *prev_t {
                markers.push(CurveMarker {
                    index: points.len() - 1,
                    kind: MarkerKind::BebTypeChange,
                    params: p,
                });
            }
        }
        points.push(CurvePoint {
            params: p,
            residual: model.h(&e, &p).abs(),
            payload: CurvePayload::Equilibrium {
                x: e,
                beb_type: beb,
            },
        });
        Ok(())
    })?;
    Ok(BifurcationCurve {
        kind: CurveKind::Beb,
        points,
        markers,
    })
}

fn floquet_stable(
    model: &FilippovModel,
    p: &Params,
    anchor: &Vector3<f64>,
    period: f64,
) -> Result<bool> {
    let step = 1e-6 * anchor.norm().max(1.0);
    let mono = fd_jacobian(
        |x| {
            let xv = Vector3::new(x[0], x[1], x[2]);
            let xf = flow_right(model, p, &xv, period, 1e-11)?;
            Ok(DVector::from_row_slice(xf.as_slice()))
        },
        &DVector::from_row_slice(anchor.as_slice()),
        step,
    )?;
    let m = Matrix3::from_iterator(mono.iter().cloned());
    let eigs = eigenvalues3(&m);
    // drop the trivial multiplier (closest to 1), test the rest
    let mut idx: Vec<usize> = (0..3).collect();
    idx.sort_by(|&a, &b| {
        (eigs[a] - Complex::new(1.0, 0.0))
            .norm()
            .total_cmp(&(eigs[b] - Complex::new(1.0, 0.0)).norm())
    });
    Ok(eigs[idx[1]].norm() < 1.0 && eigs[idx[2]].norm() < 1.0)
}

/// Options for grazing-sliding curve tracing.
#[derive(Debug, Clone)]
pub struct GsCurveOptions {
    /// Sweep range of the first parameter, traced from `.0` to `.1`.
    pub range: (f64, f64),
    pub steps: usize,
    /// Guess for the second parameter at the start of the range.
    pub eta_guess: f64,
    /// Seed for the first grazing solve.
    pub seed: GrazingSeed,
}

/// Trace the grazing-sliding curve, attaching normal-form parameters at
/// every point and marking codimension-two events where tau_L crosses +1
/// or -1.
pub fn trace_gs_curve(
    model: &FilippovModel,
    opts: &GsCurveOptions,
    tol: &ToleranceConfig,
) -> Result<BifurcationCurve> {
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut markers: Vec<CurveMarker> = Vec::new();
    let mut seed = opts.seed.clone();
    let mut eta = opts.eta_guess;

    let solve_point = |nu: f64, eta: f64, seed: &GrazingSeed| -> Result<(GrazingCycle, CurvePoint)> {
        let gc = find_grazing_cycle(model, nu, eta, seed, tol)?;
        let nf = normal_form_params(model, &gc, SectionSpec::OmegaChart, tol)?;
        let p = gc.params();
        let stable_by_nf = nf.params.delta_r > nf.params.tau_r - 1.0;
        let stable_by_floquet = floquet_stable(model, &p, &gc.grazing_point, gc.period)?;
        let residual = model.h(&gc.grazing_point, &p).abs();
        Ok((
            gc.clone(),
            CurvePoint {
                params: p,
                residual,
                payload: CurvePayload::Grazing {
                    grazing_point: gc.grazing_point,
                    period: gc.period,
                    nf: nf.params,
                    stable_by_nf,
                    stable_by_floquet,
                },
            },
        ))
    };

    adaptive_sweep(opts.range.0, opts.range.1, opts.steps, |nu| {
        let (gc, pt) = solve_point(nu, eta, &seed)?;
        seed = GrazingSeed::Cycle {
            anchor: gc.grazing_point,
            period: gc.period,
        };
        eta = gc.eta_gs;
        points.push(pt);
        Ok(())
    })?;

    // refine tau_L = +/-1 crossings between consecutive points
    let tau_of = |pt: &CurvePoint| match &pt.payload {
        CurvePayload::Grazing { nf, .. } => nf.tau_l,
        _ => f64::NAN,
    };
    for i in 0..points.len().saturating_sub(1) {
        let (ta, tb) = (tau_of(&points[i]), tau_of(&points[i + 1]));
        for (target, kind) in [(1.0, MarkerKind::TauLPlusOne), (-1.0, MarkerKind::TauLMinusOne)] {
            if (ta - target) * (tb - target) < 0.0 {
                let (pa, pb) = (points[i].params, points[i + 1].params);
                let seed_m = GrazingSeed::Cycle {
                    anchor: match &points[i].payload {
                        CurvePayload::Grazing { grazing_point, .. } => *grazing_point,
                        _ => unreachable!(),
                    },
                    period: match &points[i].payload {
                        CurvePayload::Grazing { period, .. } => *period,
                        _ => unreachable!(),
                    },
                };
                let eta_m = std::cell::Cell::new(pa[1]);
                let seed_cell = std::cell::RefCell::new(seed_m);
                let refined = secant(
                    |nu| {
                        let gc =
                            find_grazing_cycle(model, nu, eta_m.get(), &seed_cell.borrow(), tol)?;
                        let nf = normal_form_params(model, &gc, SectionSpec::OmegaChart, tol)?;
                        eta_m.set(gc.eta_gs);
                        *seed_cell.borrow_mut() = GrazingSeed::Cycle {
                            anchor: gc.grazing_point,
                            period: gc.period,
                        };
                        Ok(nf.params.tau_l - target)
                    },
                    pa[0],
                    (pb[0] - pa[0]) * 0.5,
                    1e-9,
                    30,
                )?;
                markers.push(CurveMarker {
                    index: i,
                    kind,
                    params: [refined, eta_m.get()],
                });
            }
        }
    }

    Ok(BifurcationCurve {
        kind: CurveKind::GrazingSliding,
        points,
        markers,
    })
}

/// Return map of the hybrid flow on the fold section: flow from a point of
/// the section (skipping at least `t_skip`) to the next upward crossing.
fn hybrid_omega_return(
    model: &FilippovModel,
    p: &Params,
    x0: &Vector3<f64>,
    t_skip: f64,
    t_max: f64,
) -> Result<Vector3<f64>> {
    let mut opts = IntegrateOptions::new(t_max);
    opts.store_states = false;
    opts.rtol = 1e-11;
    opts.atol = 1e-13;
    let traj = integrate_hybrid_opts(model, x0, p, &[Section::omega(1)], &opts)?;
    let hit = traj.section_hits(0).find(|e| e.t > t_skip).map(|e| e.state);
    hit.ok_or(Error::SectionNotTransverse)
}

/// Cycle of the full hybrid system anchored on the fold section, found by
/// shooting on the 2-d section chart. Returns the anchor, the return-map
/// derivative, and the return time.
pub fn hybrid_cycle_on_omega(
    model: &FilippovModel,
    p: &Params,
    anchor_guess: &Vector3<f64>,
    period_guess: f64,
    tol: &ToleranceConfig,
) -> Result<(Vector3<f64>, Matrix2<f64>)> {
    // put the guess onto the section first
    let chart0 = OmegaChart::new(model, p, anchor_guess)?;
    let mut anchor = chart0.from_chart(model, p, 0.0, 0.0)?;
    for _ in 0..40 {
        let chart = OmegaChart::new(model, p, &anchor)?;
        let r = hybrid_omega_return(model, p, &anchor, 0.55 * period_guess, 4.0 * period_guess)?;
        let (s1, s2) = chart.to_chart(&r);
        let res = (s1 * s1 + s2 * s2).sqrt();
        if res < 1e-10 * anchor.norm().max(1.0) {
            break;
        }
        // Newton on the 2-d displacement map
        let d = 1e-6 * anchor.norm().max(1.0);
        let map = |a: f64, b: f64| -> Result<(f64, f64)> {
            let x = chart.from_chart(model, p, a, b)?;
            let r = hybrid_omega_return(model, p, &x, 0.55 * period_guess, 4.0 * period_guess)?;
            let (u, v) = chart.to_chart(&r);
            Ok((u - a, v - b))
        };
        let (f0a, f0b) = (s1, s2);
        let (fp1a, fp1b) = map(d, 0.0)?;
        let (fm1a, fm1b) = map(-d, 0.0)?;
        let (fp2a, fp2b) = map(0.0, d)?;
        let (fm2a, fm2b) = map(0.0, -d)?;
        let j = Matrix2::new(
            (fp1a - fm1a) / (2.0 * d),
            (fp2a - fm2a) / (2.0 * d),
            (fp1b - fm1b) / (2.0 * d),
            (fp2b - fm2b) / (2.0 * d),
        );
        let rhs = nalgebra::Vector2::new(f0a, f0b);
        let step = j
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::SingularJacobian("hybrid_cycle_on_omega".into()))?;
        anchor = chart.from_chart(model, p, -step[0], -step[1])?;
        if step.norm() < 1e-12 * anchor.norm().max(1.0) {
            break;
        }
    }
    let _ = tol;
    // derivative of the return map at the cycle
    let chart = OmegaChart::new(model, p, &anchor)?;
    let d = 1e-6 * anchor.norm().max(1.0);
    let ret = |a: f64, b: f64| -> Result<(f64, f64)> {
        let x = chart.from_chart(model, p, a, b)?;
        let r = hybrid_omega_return(model, p, &x, 0.55 * period_guess, 4.0 * period_guess)?;
        Ok(chart.to_chart(&r))
    };
    let (p1a, p1b) = ret(d, 0.0)?;
    let (m1a, m1b) = ret(-d, 0.0)?;
    let (p2a, p2b) = ret(0.0, d)?;
    let (m2a, m2b) = ret(0.0, -d)?;
    let dr = Matrix2::new(
        (p1a - m1a) / (2.0 * d),
        (p2a - m2a) / (2.0 * d),
        (p1b - m1b) / (2.0 * d),
        (p2b - m2b) / (2.0 * d),
    );
    Ok((anchor, dr))
}

fn pd_eigenvalue(dr: &Matrix2<f64>) -> Result<f64> {
    let tr = dr.trace();
    let det = dr.determinant();
    let disc = tr * tr - 4.0 * det;
    if disc < 0.0 {
        return Err(Error::EigenvalueTrackingLost {
            closest: tr / 2.0,
        });
    }
    let sq = disc.sqrt();
    let l1 = (tr + sq) / 2.0;
    let l2 = (tr - sq) / 2.0;
    Ok(if (l1 + 1.0).abs() < (l2 + 1.0).abs() {
        l1
    } else {
        l2
    })
}

/// Options for period-doubling curve tracing.
#[derive(Debug, Clone)]
pub struct PdCurveOptions {
    pub range: (f64, f64),
    pub steps: usize,
    /// second-parameter guess at the start of the range
    pub p2_guess: f64,
    pub cycle_anchor: Vector3<f64>,
    pub cycle_period: f64,
}

/// Trace the period-doubling condition: the dominant nontrivial eigenvalue
/// of the hybrid return-map derivative equals -1. Sliding segments are
/// handled natively because the return map is computed on simulated hybrid
/// trajectories.
pub fn trace_pd_curve(
    model: &FilippovModel,
    opts: &PdCurveOptions,
    tol: &ToleranceConfig,
) -> Result<BifurcationCurve> {
    let mut points: Vec<CurvePoint> = Vec::new();
    let mut anchor = opts.cycle_anchor;
    let period = opts.cycle_period;
    let mut p2 = opts.p2_guess;

    // guard: the eigenvalue must be trackable near -1 at the start
    {
        let (a, dr) = hybrid_cycle_on_omega(model, &[opts.range.0, p2], &anchor, period, tol)?;
        let lam = pd_eigenvalue(&dr)?;
        if (lam + 1.0).abs() > 0.9 {
            return Err(Error::EigenvalueTrackingLost { closest: lam });
        }
        anchor = a;
    }

    adaptive_sweep(opts.range.0, opts.range.1, opts.steps, |p1| {
        let anchor_cell = std::cell::RefCell::new(anchor);
        let solved = secant(
            |p2c| {
                let (a, dr) =
                    hybrid_cycle_on_omega(model, &[p1, p2c], &anchor_cell.borrow(), period, tol)?;
                *anchor_cell.borrow_mut() = a;
                let lam = pd_eigenvalue(&dr)?;
                Ok(lam + 1.0)
            },
            p2,
            1e-3 * p2.abs().max(1.0),
            1e-8,
            30,
        )?;
        anchor = *anchor_cell.borrow();
        p2 = solved;
        points.push(CurvePoint {
            params: [p1, p2],
            residual: 0.0,
            payload: CurvePayload::Cycle { anchor, period },
        });
        Ok(())
    })?;

    Ok(BifurcationCurve {
        kind: CurveKind::PeriodDoubling,
        points,
        markers: vec![],
    })
}

/// One row of a one-parameter sweep: the section-hit H-values observed on
/// the attractor at this parameter value.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub value: f64,
    pub observable: Vec<f64>,
    pub diverged: bool,
    pub has_sliding: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOptions {
    /// index of the swept parameter (0 or 1); the other stays fixed
    pub sweep_index: usize,
    pub from: f64,
    pub to: f64,
    pub steps: usize,
    /// time discarded before recording
    pub transient: f64,
    /// recording window after the transient
    pub record: f64,
    pub x0: Vector3<f64>,
    pub rtol: f64,
}

impl SweepOptions {
    pub fn values(&self) -> Vec<f64> {
        let n = self.steps.max(1);
        (0..=n)
            .map(|i| self.from + (self.to - self.from) * i as f64 / n as f64)
            .collect()
    }
}

/// Sweep one parameter, integrating past the transient at every value and
/// recording H-values where the attractor crosses the section upward.
/// Warm-starts each point from the previous end state; divergence is
/// recorded as a flagged row, not a failure.
pub fn sweep_1d(
    model: &FilippovModel,
    fixed: (usize, f64),
    section: Section,
    opts: &SweepOptions,
    _tol: &ToleranceConfig,
) -> Result<Vec<SweepRow>> {
    assert_ne!(fixed.0, opts.sweep_index, "sweep and fixed parameter clash");
    let mut rows = Vec::new();
    let mut state = opts.x0;
    for v in opts.values() {
        let mut p: Params = [0.0, 0.0];
        p[fixed.0] = fixed.1;
        p[opts.sweep_index] = v;

        let mut io = IntegrateOptions::new(opts.transient);
        io.store_states = false;
        io.rtol = opts.rtol;
        io.atol = opts.rtol * 1e-2;
        let settled = match integrate_hybrid_opts(model, &state, &p, &[], &io) {
            Ok(traj) => match traj.final_state() {
                Some((_, x)) => x,
                None => state,
            },
            Err(Error::Divergence { .. }) => {
                rows.push(SweepRow {
                    value: v,
                    observable: vec![],
                    diverged: true,
                    has_sliding: false,
                });
                state = opts.x0;
                continue;
            }
            Err(e) => return Err(e),
        };

        let mut io = IntegrateOptions::new(opts.record);
        io.store_states = false;
        io.rtol = opts.rtol;
        io.atol = opts.rtol * 1e-2;
        match integrate_hybrid_opts(model, &settled, &p, std::slice::from_ref(&section), &io) {
            Ok(traj) => {
                let obs: Vec<f64> = traj
                    .section_hits(0)
                    .map(|e| model.h(&e.state, &p))
                    .collect();
                let has_sliding = traj.has_sliding();
                state = traj.final_state().map(|(_, x)| x).unwrap_or(settled);
                rows.push(SweepRow {
                    value: v,
                    observable: obs,
                    diverged: false,
                    has_sliding,
                });
            }
            Err(Error::Divergence { .. }) => {
                rows.push(SweepRow {
                    value: v,
                    observable: vec![],
                    diverged: true,
                    has_sliding: false,
                });
                state = opts.x0;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(rows)
}

/// CSV export of sweep rows: sweep_param, observable (one row per value).
pub fn sweep_to_csv<W: Write>(rows: &[SweepRow], w: &mut W) -> io::Result<()> {
    writeln!(w, "sweep_param,observable,diverged,has_sliding")?;
    for r in rows {
        if r.observable.is_empty() {
            writeln!(w, "{:.16e},,{},{}", r.value, r.diverged, r.has_sliding)?;
        }
        for o in &r.observable {
            writeln!(
                w,
                "{:.16e},{:.16e},{},{}",
                r.value, o, r.diverged, r.has_sliding
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::builtins::{pest_model, toy_model};
    use approx::assert_abs_diff_eq;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    #[test]
    fn eigenvalues3_handles_both_spectra() {
        let m = Matrix3::new(1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0);
        let mut eigs: Vec<f64> = eigenvalues3(&m).iter().map(|e| e.re).collect();
        eigs.sort_by(f64::total_cmp);
        assert!((eigs[0] - 1.0).abs() < 1e-10);
        assert!((eigs[2] - 3.0).abs() < 1e-10);
        let m = Matrix3::new(0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, -0.2);
        let eigs = eigenvalues3(&m);
        let pair: Vec<_> = eigs.iter().filter(|e| e.im.abs() > 1e-12).collect();
        assert_eq!(pair.len(), 2);
        assert!((pair[0].im.abs() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn toy_hopf_curve_is_eta_zero() {
        let m = toy_model();
        let curve = trace_hopf_curve(
            &m,
            &[0.1, 0.01],
            &Vector3::zeros(),
            (0.1, 0.9),
            8,
            &tol(),
        )
        .unwrap();
        assert!(curve.points.len() >= 9);
        for pt in &curve.points {
            assert_abs_diff_eq!(pt.params[1], 0.0, epsilon = 1e-8);
            assert!(pt.residual < 1e-9);
        }
    }

    #[test]
    fn toy_beb_curve_is_nu_zero_and_nonsmooth_fold() {
        let m = toy_model();
        let curve = trace_beb_curve(
            &m,
            &[0.05, -0.2],
            &Vector3::zeros(),
            (-0.2, 0.2),
            8,
            &tol(),
        )
        .unwrap();
        for pt in &curve.points {
            assert_abs_diff_eq!(pt.params[0], 0.0, epsilon = 1e-9);
            match &pt.payload {
                CurvePayload::Equilibrium { beb_type, .. } => {
                    assert_eq!(*beb_type, Some(BebType::NonsmoothFold))
                }
                _ => panic!("wrong payload"),
            }
        }
        assert!(curve.markers.is_empty());
    }

    #[test]
    fn pest_hopf_curve_is_vertical_in_b1() {
        let m = pest_model();
        let curve = trace_hopf_curve(
            &m,
            &[12.5, 2.114],
            &Vector3::new(0.76, 0.125, 13.2),
            (12.5, 13.1),
            3,
            &tol(),
        )
        .unwrap();
        for pt in &curve.points {
            assert_abs_diff_eq!(pt.params[1], 2.1138, epsilon = 1e-3);
        }
        // control-independent: spread across the curve is tiny
        let b: Vec<f64> = curve.points.iter().map(|p| p.params[1]).collect();
        let spread = b.iter().cloned().fold(f64::MIN, f64::max)
            - b.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread < 1e-9, "spread {spread}");
    }

    #[test]
    fn degenerate_spectrum_start_is_rejected() {
        use crate::filippov::Params;
        use std::sync::Arc;
        // all-real spectrum: no Hopf candidate anywhere
        let fr = Arc::new(|x: &Vector3<f64>, p: &Params| {
            Vector3::new(-x[0] + p[1], -2.0 * x[1], -3.0 * x[2])
        });
        let fl = fr.clone();
        let m = FilippovModel::new(
            "real-spectrum",
            ["nu", "eta"],
            fl,
            fr,
            Arc::new(|x: &Vector3<f64>, _p: &Params| x[0] + 10.0),
        );
        let e = trace_hopf_curve(&m, &[0.0, 0.0], &Vector3::zeros(), (0.0, 1.0), 4, &tol())
            .unwrap_err();
        assert_eq!(e.kind(), "DegenerateSpectrum");
    }

    #[test]
    fn toy_gs_curve_short_segment() {
        let m = toy_model();
        let curve = trace_gs_curve(
            &m,
            &GsCurveOptions {
                range: (0.3, 0.2),
                steps: 2,
                eta_guess: 0.0135,
                seed: GrazingSeed::Equilibrium(Vector3::zeros()),
            },
            &tol(),
        )
        .unwrap();
        assert_eq!(curve.points.len(), 3);
        let mut deviations = vec![];
        for pt in &curve.points {
            match &pt.payload {
                CurvePayload::Grazing { nf, stable_by_nf, stable_by_floquet, .. } => {
                    assert!(nf.delta_l.abs() < 1e-8);
                    assert!(*stable_by_nf && *stable_by_floquet);
                    deviations.push((nf.tau_r - nf.delta_r - 1.0).abs());
                }
                _ => panic!("wrong payload"),
            }
        }
        // tau_R - delta_R approaches 1 toward the codim-2 point: the curve
        // runs from nu = 0.3 down to 0.2, so the deviation shrinks
        assert!(deviations[2] < deviations[0]);
        assert!(deviations[2] < 0.03, "deviation {}", deviations[2]);
        // re-solve the middle point from scratch: residual stays small
        let mid = &curve.points[1];
        let gc2 = find_grazing_cycle(
            &m,
            mid.params[0],
            mid.params[1] * 1.001,
            &GrazingSeed::Equilibrium(Vector3::zeros()),
            &tol(),
        )
        .unwrap();
        assert_abs_diff_eq!(gc2.eta_gs, mid.params[1], epsilon = 1e-8);
    }

    #[test]
    fn sweep_csv_format() {
        let rows = vec![SweepRow {
            value: 0.5,
            observable: vec![0.1, 0.2],
            diverged: false,
            has_sliding: true,
        }];
        let mut buf = Vec::new();
        sweep_to_csv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("sweep_param,observable,diverged,has_sliding\n"));
        assert_eq!(s.lines().count(), 3);
    }
}
