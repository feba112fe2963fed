//! Filippov models on a single switching surface: Lie-derivative machinery,
//! the sliding vector field, surface-region classification, and the
//! event-driven hybrid integrator.

pub mod hybrid;
pub mod rk45;

use crate::error::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use std::fmt;
use std::sync::Arc;

pub use hybrid::{
    integrate_hybrid, integrate_hybrid_opts, EventKind, HybridTrajectory, IntegrateOptions,
    Regime, Section, Segment, TrajEvent,
};

/// Classification band for tangencies: |Lie derivative| below this counts
/// as tangent to the surface.
pub const TANGENCY_BAND: f64 = 1e-8;

pub type Params = [f64; 2];
pub type FieldFn = dyn Fn(&Vector3<f64>, &Params) -> Vector3<f64> + Send + Sync;
pub type ScalarFn = dyn Fn(&Vector3<f64>, &Params) -> f64 + Send + Sync;
pub type JacFn = dyn Fn(&Vector3<f64>, &Params) -> Matrix3<f64> + Send + Sync;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// A two-piece vector field over a 3-dimensional state with two scalar
/// bifurcation parameters, switching across the zero set of `h`.
///
/// Models are immutable after construction and cheap to clone (shared
/// closures), so one instance can serve many concurrent integrations.
#[derive(Clone)]
pub struct FilippovModel {
    pub name: String,
    pub param_names: [String; 2],
    f_left: Arc<FieldFn>,
    f_right: Arc<FieldFn>,
    h: Arc<ScalarFn>,
    grad_h: Option<Arc<FieldFn>>,
    jac_right: Option<Arc<JacFn>>,
    fd_step: f64,
}

impl fmt::Debug for FilippovModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FilippovModel")
            .field("name", &self.name)
            .field("param_names", &self.param_names)
            .finish()
    }
}

impl FilippovModel {
    pub fn new(
        name: impl Into<String>,
        param_names: [&str; 2],
        f_left: Arc<FieldFn>,
        f_right: Arc<FieldFn>,
        h: Arc<ScalarFn>,
    ) -> Self {
        FilippovModel {
            name: name.into(),
            param_names: [param_names[0].to_string(), param_names[1].to_string()],
            f_left,
            f_right,
            h,
            grad_h: None,
            jac_right: None,
            fd_step: f64::EPSILON.cbrt(),
        }
    }

    pub fn with_grad_h(mut self, grad_h: Arc<FieldFn>) -> Self {
        self.grad_h = Some(grad_h);
        self
    }

    pub fn with_jac_right(mut self, jac: Arc<JacFn>) -> Self {
        self.jac_right = Some(jac);
        self
    }

    pub fn f_left(&self, x: &Vector3<f64>, p: &Params) -> Vector3<f64> {
        (self.f_left)(x, p)
    }

    pub fn f_right(&self, x: &Vector3<f64>, p: &Params) -> Vector3<f64> {
        (self.f_right)(x, p)
    }

    pub fn field(&self, side: Side, x: &Vector3<f64>, p: &Params) -> Vector3<f64> {
        match side {
            Side::Left => self.f_left(x, p),
            Side::Right => self.f_right(x, p),
        }
    }

    pub fn h(&self, x: &Vector3<f64>, p: &Params) -> f64 {
        (self.h)(x, p)
    }

    /// Gradient of the switching function, analytic when registered and a
    /// central difference otherwise.
    pub fn grad_h(&self, x: &Vector3<f64>, p: &Params) -> Vector3<f64> {
        if let Some(g) = &self.grad_h {
            return g(x, p);
        }
        let mut out = Vector3::zeros();
        for j in 0..3 {
            let hstep = self.fd_step * x[j].abs().max(1.0);
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += hstep;
            xm[j] -= hstep;
            out[j] = (self.h(&xp, p) - self.h(&xm, p)) / (2.0 * hstep);
        }
        out
    }

    /// Jacobian of the right field, analytic when registered.
    pub fn jac_right(&self, x: &Vector3<f64>, p: &Params) -> Matrix3<f64> {
        if let Some(j) = &self.jac_right {
            return j(x, p);
        }
        let mut out = Matrix3::zeros();
        for j in 0..3 {
            let hstep = self.fd_step * x[j].abs().max(1.0);
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += hstep;
            xm[j] -= hstep;
            let col = (self.f_right(&xp, p) - self.f_right(&xm, p)) / (2.0 * hstep);
            out.set_column(j, &col);
        }
        out
    }

    /// First Lie derivative of `h` along the chosen field.
    pub fn lie_derivative(&self, side: Side, x: &Vector3<f64>, p: &Params) -> f64 {
        self.grad_h(x, p).dot(&self.field(side, x, p))
    }

    /// Gradient of the first Lie derivative along the right field, by
    /// central differences of the scalar map.
    pub fn grad_lie_right(&self, x: &Vector3<f64>, p: &Params) -> Vector3<f64> {
        let mut out = Vector3::zeros();
        for j in 0..3 {
            let hstep = self.fd_step * x[j].abs().max(1.0);
            let mut xp = *x;
            let mut xm = *x;
            xp[j] += hstep;
            xm[j] -= hstep;
            out[j] = (self.lie_derivative(Side::Right, &xp, p)
                - self.lie_derivative(Side::Right, &xm, p))
                / (2.0 * hstep);
        }
        out
    }

    /// Second Lie derivative of `h` along the right field.
    pub fn lie_derivative2(&self, x: &Vector3<f64>, p: &Params) -> f64 {
        self.grad_lie_right(x, p).dot(&self.f_right(x, p))
    }

    /// Check that the surface is regular at `x` (nonzero gradient).
    pub fn require_regular_surface(&self, x: &Vector3<f64>, p: &Params) -> Result<Vector3<f64>> {
        let g = self.grad_h(x, p);
        let n = g.norm();
        if n < 1e-12 {
            return Err(Error::NonregularSurface { norm: n });
        }
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum SurfaceKind {
    Crossing,
    AttractingSliding,
    RepellingSliding,
    TangencyLeft,
    TangencyRight,
}

#[derive(Debug, Clone, Copy)]
pub struct SurfaceClassification {
    pub kind: SurfaceKind,
    pub lie_left: f64,
    pub lie_right: f64,
}

/// The Filippov sliding velocity and its convex coefficient.
#[derive(Debug, Clone, Copy)]
pub struct SlidingEval {
    pub velocity: Vector3<f64>,
    /// `F_S = (1 - lambda) F_L + lambda F_R`; lies in [0, 1] on attracting
    /// sliding regions.
    pub convex_lambda: f64,
}

/// Evaluate the sliding vector field at a point of the switching surface.
pub fn sliding_field(
    model: &FilippovModel,
    x: &Vector3<f64>,
    p: &Params,
    event_tol: f64,
) -> Result<SlidingEval> {
    let h = model.h(x, p);
    if h.abs() > event_tol {
        return Err(Error::NotOnSurface { h });
    }
    Ok(sliding_field_unchecked(model, x, p)?)
}

/// As `sliding_field`, but without the on-surface check; used internally
/// while integrating, where the state is projected onto the surface.
pub fn sliding_field_unchecked(
    model: &FilippovModel,
    x: &Vector3<f64>,
    p: &Params,
) -> Result<SlidingEval> {
    let grad = model.require_regular_surface(x, p)?;
    let fl = model.f_left(x, p);
    let fr = model.f_right(x, p);
    let ll = grad.dot(&fl);
    let lr = grad.dot(&fr);
    let den = ll - lr;
    if den.abs() < 1e-14 {
        return Err(Error::DegenerateDenominator("sliding_field".into()));
    }
    Ok(SlidingEval {
        velocity: (fr * ll - fl * lr) / den,
        convex_lambda: ll / den,
    })
}

/// Classify a point of the switching surface by the signs of the two first
/// Lie derivatives, with a tolerance band for tangencies.
pub fn classify_surface_point(
    model: &FilippovModel,
    x: &Vector3<f64>,
    p: &Params,
    event_tol: f64,
) -> Result<SurfaceClassification> {
    let h = model.h(x, p);
    if h.abs() > event_tol {
        return Err(Error::NotOnSurface { h });
    }
    model.require_regular_surface(x, p)?;
    let ll = model.lie_derivative(Side::Left, x, p);
    let lr = model.lie_derivative(Side::Right, x, p);
    let kind = if lr.abs() <= TANGENCY_BAND {
        SurfaceKind::TangencyRight
    } else if ll.abs() <= TANGENCY_BAND {
        SurfaceKind::TangencyLeft
    } else if ll > 0.0 && lr < 0.0 {
        SurfaceKind::AttractingSliding
    } else if ll < 0.0 && lr > 0.0 {
        SurfaceKind::RepellingSliding
    } else {
        SurfaceKind::Crossing
    };
    Ok(SurfaceClassification {
        kind,
        lie_left: ll,
        lie_right: lr,
    })
}
