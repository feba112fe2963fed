//! Adaptive Dormand-Prince 5(4) stepper for 3-vector states, with cubic
//! dense output and bracketed event localisation on the interpolant.

use crate::error::{Error, Result};
use crate::numerics::{scalar_root_bracketed, ToleranceConfig};
use nalgebra::Vector3;

#[derive(Debug, Clone)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rtol: 1e-10,
            atol: 1e-12,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

/// A scalar event function watched along the flow. The first event located
/// in time terminates the leg; the caller decides how to resume.
pub struct EventFn<'a> {
    pub g: Box<dyn Fn(f64, &Vector3<f64>) -> f64 + 'a>,
    /// +1: trigger on upward crossings, -1: downward, 0: both.
    pub direction: i8,
    /// |g| must exceed this before the event is armed; suppresses
    /// re-triggering when a leg starts on the event surface.
    pub arm_band: f64,
}

pub enum LegEnd {
    TimeEnd,
    Event { index: usize, t: f64, y: Vector3<f64> },
    Diverged { t: f64, norm: f64 },
}

pub struct LegResult {
    pub end: LegEnd,
    pub t: f64,
    pub y: Vector3<f64>,
}

/// Cubic Hermite interpolant over one accepted step.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub t1: f64,
    pub y0: Vector3<f64>,
    pub y1: Vector3<f64>,
    pub f0: Vector3<f64>,
    pub f1: Vector3<f64>,
}

impl DenseStep {
    pub fn eval(&self, t: f64) -> Vector3<f64> {
        let h = self.t1 - self.t0;
        let s = (t - self.t0) / h;
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        self.y0 * h00 + self.f0 * (h10 * h) + self.y1 * h01 + self.f1 * (h11 * h)
    }
}

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// difference between the 5th- and 4th-order weights
const E1: f64 = B1 - 5179.0 / 57600.0;
const E3: f64 = B3 - 7571.0 / 16695.0;
const E4: f64 = B4 - 393.0 / 640.0;
const E5: f64 = B5 + 92097.0 / 339200.0;
const E6: f64 = B6 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

struct EventState {
    armed: bool,
    last: f64,
}

/// Integrate `dy/dt = f(t, y)` from `(t0, y0)` to `t_end`, watching events.
///
/// `post_step` may adjust the accepted end state (used to project sliding
/// motion back onto the switching surface). `on_step` receives every
/// accepted point, including the initial one and any event point.
#[allow(clippy::too_many_arguments)]
pub fn integrate_leg<F, P, R>(
    f: F,
    t0: f64,
    y0: &Vector3<f64>,
    t_end: f64,
    events: &mut [EventFn<'_>],
    ctrl: &StepControl,
    tol: &ToleranceConfig,
    divergence_bound: f64,
    mut post_step: P,
    mut on_step: R,
) -> Result<LegResult>
where
    F: Fn(f64, &Vector3<f64>) -> Vector3<f64>,
    P: FnMut(&mut Vector3<f64>),
    R: FnMut(f64, &Vector3<f64>),
{
    let mut t = t0;
    let mut y = *y0;
    let span = t_end - t0;
    if span <= 0.0 {
        return Err(Error::EvaluationFailure("integrate_leg: empty span".into()));
    }
    let mut f0 = f(t, &y);
    if !f0.iter().all(|v| v.is_finite()) {
        return Err(Error::EvaluationFailure(format!(
            "field is non-finite at t = {t}"
        )));
    }
    let mut states: Vec<EventState> = events
        .iter()
        .map(|ev| {
            let g = (ev.g)(t, &y);
            EventState {
                armed: g.abs() > ev.arm_band,
                last: g,
            }
        })
        .collect();

    // initial step heuristic
    let scale = y.norm().max(1.0);
    let mut h = (0.01 * scale / f0.norm().max(1e-8)).min(span / 10.0).min(ctrl.h_max);
    on_step(t, &y);

    let mut rejected_in_a_row = 0usize;
    for _ in 0..ctrl.max_steps {
        if t >= t_end {
            return Ok(LegResult {
                end: LegEnd::TimeEnd,
                t,
                y,
            });
        }
        h = h.min(t_end - t).min(ctrl.h_max);

        let k1 = f0;
        let k2 = f(t + C2 * h, &(y + k1 * (A21 * h)));
        let k3 = f(t + C3 * h, &(y + (k1 * A31 + k2 * A32) * h));
        let k4 = f(t + C4 * h, &(y + (k1 * A41 + k2 * A42 + k3 * A43) * h));
        let k5 = f(
            t + C5 * h,
            &(y + (k1 * A51 + k2 * A52 + k3 * A53 + k4 * A54) * h),
        );
        let k6 = f(
            t + h,
            &(y + (k1 * A61 + k2 * A62 + k3 * A63 + k4 * A64 + k5 * A65) * h),
        );
        let mut y1 = y + (k1 * B1 + k3 * B3 + k4 * B4 + k5 * B5 + k6 * B6) * h;
        let k7 = f(t + h, &y1);

        let finite = y1.iter().all(|v| v.is_finite()) && k7.iter().all(|v| v.is_finite());
        if !finite {
            h *= 0.25;
            rejected_in_a_row += 1;
            if rejected_in_a_row > 60 {
                return Err(Error::StepFailure {
                    t,
                    reason: "state became non-finite".into(),
                });
            }
            continue;
        }

        let err_vec = (k1 * E1 + k3 * E3 + k4 * E4 + k5 * E5 + k6 * E6 + k7 * E7) * h;
        let mut err = 0.0f64;
        for i in 0..3 {
            let sc = ctrl.atol + ctrl.rtol * y[i].abs().max(y1[i].abs());
            err += (err_vec[i] / sc).powi(2);
        }
        err = (err / 3.0).sqrt();

        if err > 1.0 {
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
            rejected_in_a_row += 1;
            if rejected_in_a_row > 60 {
                return Err(Error::StepFailure {
                    t,
                    reason: format!("error control stalled (err = {err:e})"),
                });
            }
            continue;
        }
        rejected_in_a_row = 0;

        post_step(&mut y1);
        let f1 = f(t + h, &y1);
        let dense = DenseStep {
            t0: t,
            t1: t + h,
            y0: y,
            y1,
            f0: k1,
            f1,
        };

        // event scan over this step
        let mut hit: Option<(usize, f64)> = None;
        for (i, ev) in events.iter().enumerate() {
            let g1 = (ev.g)(t + h, &y1);
            let st = &mut states[i];
            let crossed = st.armed
                && st.last * g1 <= 0.0
                && (st.last != 0.0 || g1 != 0.0)
                && match ev.direction {
                    1 => g1 > st.last,
                    -1 => g1 < st.last,
                    _ => true,
                };
            if crossed {
                let te = if g1 == 0.0 {
                    t + h
                } else {
                    let root_tol = ToleranceConfig {
                        abs_tol: 1e-13 * (t + h).abs().max(1.0),
                        ..tol.clone()
                    };
                    scalar_root_bracketed(|tt| (ev.g)(tt, &dense.eval(tt)), t, t + h, &root_tol)?
                };
                match hit {
                    Some((_, tb)) if tb <= te => {}
                    _ => hit = Some((i, te)),
                }
            }
            if !st.armed && g1.abs() > ev.arm_band {
                st.armed = true;
            }
            st.last = g1;
        }

        if let Some((idx, te)) = hit {
            let ye = dense.eval(te);
            on_step(te, &ye);
            return Ok(LegResult {
                end: LegEnd::Event {
                    index: idx,
                    t: te,
                    y: ye,
                },
                t: te,
                y: ye,
            });
        }

        t += h;
        y = y1;
        f0 = f1;
        on_step(t, &y);

        if y.norm() > divergence_bound {
            return Ok(LegResult {
                end: LegEnd::Diverged { t, norm: y.norm() },
                t,
                y,
            });
        }

        h *= (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
    }
    Err(Error::StepFailure {
        t,
        reason: "max step count exceeded".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn harmonic_oscillator_period() {
        let f = |_t: f64, y: &Vector3<f64>| Vector3::new(y[1], -y[0], 0.0);
        let res = integrate_leg(
            f,
            0.0,
            &Vector3::new(1.0, 0.0, 0.0),
            2.0 * std::f64::consts::PI,
            &mut [],
            &StepControl::default(),
            &ToleranceConfig::default(),
            1e6,
            |_| {},
            |_, _| {},
        )
        .unwrap();
        assert_abs_diff_eq!(res.y[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(res.y[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn event_located_on_dense_output() {
        // y' = 1, event at y = 0.5 crossing upward
        let f = |_t: f64, _y: &Vector3<f64>| Vector3::new(1.0, 0.0, 0.0);
        let mut events = [EventFn {
            g: Box::new(|_t, y: &Vector3<f64>| y[0] - 0.5),
            direction: 1,
            arm_band: 1e-9,
        }];
        let res = integrate_leg(
            f,
            0.0,
            &Vector3::zeros(),
            2.0,
            &mut events,
            &StepControl::default(),
            &ToleranceConfig::default(),
            1e6,
            |_| {},
            |_, _| {},
        )
        .unwrap();
        match res.end {
            LegEnd::Event { t, .. } => assert_abs_diff_eq!(t, 0.5, epsilon = 1e-10),
            _ => panic!("expected event"),
        }
    }

    #[test]
    fn direction_filter_skips_downward_crossings() {
        // oscillator: y0 = cos t crosses 0 downward first; with direction=+1
        // the first trigger is the upward crossing at 3pi/2
        let f = |_t: f64, y: &Vector3<f64>| Vector3::new(y[1], -y[0], 0.0);
        let mut events = [EventFn {
            g: Box::new(|_t, y: &Vector3<f64>| y[0]),
            direction: 1,
            arm_band: 1e-9,
        }];
        let res = integrate_leg(
            f,
            0.0,
            &Vector3::new(1.0, 0.0, 0.0),
            10.0,
            &mut events,
            &StepControl::default(),
            &ToleranceConfig::default(),
            1e6,
            |_| {},
            |_, _| {},
        )
        .unwrap();
        match res.end {
            LegEnd::Event { t, .. } => {
                assert_abs_diff_eq!(t, 1.5 * std::f64::consts::PI, epsilon = 1e-8)
            }
            _ => panic!("expected event"),
        }
    }

    #[test]
    fn reversibility_of_smooth_integration() {
        let f = |_t: f64, y: &Vector3<f64>| Vector3::new(y[1], -y[0] + 0.1 * y[1], -0.2 * y[2]);
        let fb = |_t: f64, y: &Vector3<f64>| -f(0.0, y);
        let y0 = Vector3::new(0.3, -0.2, 0.5);
        let fwd = integrate_leg(
            f,
            0.0,
            &y0,
            5.0,
            &mut [],
            &StepControl::default(),
            &ToleranceConfig::default(),
            1e6,
            |_| {},
            |_, _| {},
        )
        .unwrap();
        let back = integrate_leg(
            fb,
            0.0,
            &fwd.y,
            5.0,
            &mut [],
            &StepControl::default(),
            &ToleranceConfig::default(),
            1e6,
            |_| {},
            |_, _| {},
        )
        .unwrap();
        assert!((back.y - y0).norm() / y0.norm() < 1e-6);
    }
}
