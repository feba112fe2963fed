//! Event-driven hybrid integration of Filippov systems: smooth legs on
//! either side of the switching surface, sliding legs on attracting sliding
//! regions, and event records for crossings, sliding entries/exits, and
//! Poincare-section hits.

use super::rk45::{integrate_leg, EventFn, LegEnd, StepControl};
use super::{
    classify_surface_point, sliding_field_unchecked, FilippovModel, Params, Side, SurfaceKind,
};
use crate::error::{Error, Result};
use crate::numerics::ToleranceConfig;
use nalgebra::Vector3;
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Regime {
    Left,
    Right,
    Sliding,
}

impl Regime {
    pub fn label(&self) -> &'static str {
        match self {
            Regime::Left => "Left",
            Regime::Right => "Right",
            Regime::Sliding => "Sliding",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum EventKind {
    CrossLtoR,
    CrossRtoL,
    SlideEntry,
    SlideExitFold,
    SlideExitLeft,
    SectionHit,
}

impl EventKind {
    pub fn label(&self) -> &'static str {
        match self {
            EventKind::CrossLtoR => "CrossLtoR",
            EventKind::CrossRtoL => "CrossRtoL",
            EventKind::SlideEntry => "SlideEntry",
            EventKind::SlideExitFold => "SlideExitFold",
            EventKind::SlideExitLeft => "SlideExitLeft",
            EventKind::SectionHit => "SectionHit",
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrajEvent {
    pub t: f64,
    pub kind: EventKind,
    pub state: Vector3<f64>,
    /// Which section fired, for `SectionHit` events.
    pub section_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Segment {
    pub regime: Regime,
    pub times: Vec<f64>,
    pub states: Vec<Vector3<f64>>,
}

#[derive(Debug, Clone, Default)]
pub struct HybridTrajectory {
    pub segments: Vec<Segment>,
    pub events: Vec<TrajEvent>,
}

impl HybridTrajectory {
    pub fn final_state(&self) -> Option<(f64, Vector3<f64>)> {
        let seg = self.segments.last()?;
        Some((*seg.times.last()?, *seg.states.last()?))
    }

    pub fn has_sliding(&self) -> bool {
        self.segments.iter().any(|s| s.regime == Regime::Sliding)
    }

    /// Section-hit events for one section index.
    pub fn section_hits(&self, index: usize) -> impl Iterator<Item = &TrajEvent> {
        self.events
            .iter()
            .filter(move |e| e.kind == EventKind::SectionHit && e.section_index == Some(index))
    }

    /// Write the trajectory as CSV with columns t, x1, x2, x3, regime.
    pub fn to_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "t,x1,x2,x3,regime")?;
        for seg in &self.segments {
            for (t, x) in seg.times.iter().zip(&seg.states) {
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                    t,
                    x[0],
                    x[1],
                    x[2],
                    seg.regime.label()
                )?;
            }
        }
        Ok(())
    }

    /// Write the event log as CSV with columns t, kind, x1, x2, x3.
    pub fn events_to_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "t,kind,x1,x2,x3")?;
        for e in &self.events {
            writeln!(
                w,
                "{:.16e},{},{:.16e},{:.16e},{:.16e}",
                e.t,
                e.kind.label(),
                e.state[0],
                e.state[1],
                e.state[2]
            )?;
        }
        Ok(())
    }
}

/// A Poincare-section specification for hit recording.
#[derive(Debug, Clone)]
pub enum SectionKind {
    /// The fold section `L_{F_R} H = 0`.
    Omega,
    /// A plane through `point` with the given `normal`.
    Plane {
        point: Vector3<f64>,
        normal: Vector3<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct Section {
    pub kind: SectionKind,
    /// +1: record upward crossings only, -1: downward, 0: both.
    pub direction: i8,
}

impl Section {
    pub fn omega(direction: i8) -> Self {
        Section {
            kind: SectionKind::Omega,
            direction,
        }
    }

    pub fn plane(point: Vector3<f64>, normal: Vector3<f64>, direction: i8) -> Self {
        Section {
            kind: SectionKind::Plane { point, normal },
            direction,
        }
    }

    fn eval(&self, model: &FilippovModel, x: &Vector3<f64>, p: &Params) -> f64 {
        match &self.kind {
            SectionKind::Omega => model.lie_derivative(Side::Right, x, p),
            SectionKind::Plane { point, normal } => normal.dot(&(x - point)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    pub t_max: f64,
    pub rtol: f64,
    pub atol: f64,
    /// Events are located to this accuracy in the switching function.
    pub event_tol: f64,
    /// |g| must exceed this before an event re-arms.
    pub arm_band: f64,
    pub divergence_bound: f64,
    pub max_events: usize,
    /// When false, only segment endpoints are stored (events are always kept).
    pub store_states: bool,
}

impl IntegrateOptions {
    pub fn new(t_max: f64) -> Self {
        IntegrateOptions {
            t_max,
            rtol: 1e-10,
            atol: 1e-12,
            event_tol: 1e-10,
            arm_band: 1e-8,
            divergence_bound: 1e6,
            max_events: 100_000,
            store_states: true,
        }
    }

    pub fn from_tol(t_max: f64, tol: &ToleranceConfig) -> Self {
        IntegrateOptions {
            rtol: tol.rel_tol,
            atol: tol.abs_tol * 1e-2,
            ..IntegrateOptions::new(t_max)
        }
    }
}

enum LegLabel {
    Section(usize),
    HCross,
    FoldExit,
    LeftExit,
}

/// Integrate the Filippov system from `x0`, switching regimes at events.
pub fn integrate_hybrid(
    model: &FilippovModel,
    x0: &Vector3<f64>,
    params: &Params,
    t_max: f64,
    sections: &[Section],
    tol: &ToleranceConfig,
) -> Result<HybridTrajectory> {
    integrate_hybrid_opts(
        model,
        x0,
        params,
        sections,
        &IntegrateOptions::from_tol(t_max, tol),
    )
}

fn initial_regime(
    model: &FilippovModel,
    x0: &Vector3<f64>,
    p: &Params,
    opts: &IntegrateOptions,
) -> Result<Regime> {
    let h0 = model.h(x0, p);
    if h0 > opts.event_tol {
        return Ok(Regime::Right);
    }
    if h0 < -opts.event_tol {
        return Ok(Regime::Left);
    }
    let c = classify_surface_point(model, x0, p, opts.event_tol * 2.0)?;
    Ok(match c.kind {
        SurfaceKind::AttractingSliding => Regime::Sliding,
        SurfaceKind::Crossing => {
            if c.lie_right > 0.0 {
                Regime::Right
            } else {
                Regime::Left
            }
        }
        SurfaceKind::TangencyRight => Regime::Right,
        SurfaceKind::TangencyLeft => Regime::Left,
        SurfaceKind::RepellingSliding => {
            return Err(Error::EvaluationFailure(
                "forward dynamics from a repelling sliding point are set-valued".into(),
            ))
        }
    })
}

pub fn integrate_hybrid_opts(
    model: &FilippovModel,
    x0: &Vector3<f64>,
    params: &Params,
    sections: &[Section],
    opts: &IntegrateOptions,
) -> Result<HybridTrajectory> {
    let p = *params;
    let mut traj = HybridTrajectory::default();
    let mut t = 0.0;
    let mut x = *x0;
    let mut regime = initial_regime(model, &x, &p, opts)?;
    let mut event_count = 0usize;
    let ctrl = StepControl {
        rtol: opts.rtol,
        atol: opts.atol,
        ..StepControl::default()
    };
    let tol = ToleranceConfig {
        abs_tol: opts.event_tol,
        rel_tol: opts.rtol,
        ..ToleranceConfig::default()
    };

    let mut seg = Segment {
        regime,
        times: vec![],
        states: vec![],
    };

    while t < opts.t_max * (1.0 - 1e-15) {
        // assemble the event set for this regime
        let mut events: Vec<EventFn<'_>> = Vec::new();
        let mut labels: Vec<LegLabel> = Vec::new();
        for (i, s) in sections.iter().enumerate() {
            // on sliding legs the Omega section coincides with the fold-exit
            // event; record it there instead of racing two event roots
            if regime == Regime::Sliding && matches!(s.kind, SectionKind::Omega) {
                continue;
            }
            let sref = s;
            events.push(EventFn {
                g: Box::new(move |_tt, yy| sref.eval(model, yy, &p)),
                direction: s.direction,
                arm_band: opts.event_tol * 10.0,
            });
            labels.push(LegLabel::Section(i));
        }
        match regime {
            Regime::Left => {
                events.push(EventFn {
                    g: Box::new(move |_tt, yy| model.h(yy, &p)),
                    direction: 1,
                    arm_band: opts.arm_band,
                });
                labels.push(LegLabel::HCross);
            }
            Regime::Right => {
                events.push(EventFn {
                    g: Box::new(move |_tt, yy| model.h(yy, &p)),
                    direction: -1,
                    arm_band: opts.arm_band,
                });
                labels.push(LegLabel::HCross);
            }
            Regime::Sliding => {
                events.push(EventFn {
                    g: Box::new(move |_tt, yy| model.lie_derivative(Side::Right, yy, &p)),
                    direction: 1,
                    arm_band: opts.arm_band,
                });
                labels.push(LegLabel::FoldExit);
                events.push(EventFn {
                    g: Box::new(move |_tt, yy| model.lie_derivative(Side::Left, yy, &p)),
                    direction: -1,
                    arm_band: opts.arm_band,
                });
                labels.push(LegLabel::LeftExit);
            }
        }

        let store = opts.store_states;
        let fresh = seg.times.is_empty();
        let mut first_point = true;
        let record = |tt: f64, yy: &Vector3<f64>, seg: &mut Segment, first: &mut bool| {
            if *first {
                *first = false;
                if !fresh {
                    return; // continuing a segment; start point already stored
                }
            }
            if store || seg.times.len() < 2 {
                seg.times.push(tt);
                seg.states.push(*yy);
            } else {
                *seg.times.last_mut().unwrap() = tt;
                *seg.states.last_mut().unwrap() = *yy;
            }
        };

        let res = match regime {
            Regime::Left => integrate_leg(
                |_tt, yy| model.f_left(yy, &p),
                t,
                &x,
                opts.t_max,
                &mut events,
                &ctrl,
                &tol,
                opts.divergence_bound,
                |_| {},
                |tt, yy| record(tt, yy, &mut seg, &mut first_point),
            )?,
            Regime::Right => integrate_leg(
                |_tt, yy| model.f_right(yy, &p),
                t,
                &x,
                opts.t_max,
                &mut events,
                &ctrl,
                &tol,
                opts.divergence_bound,
                |_| {},
                |tt, yy| record(tt, yy, &mut seg, &mut first_point),
            )?,
            Regime::Sliding => integrate_leg(
                |_tt, yy| match sliding_field_unchecked(model, yy, &p) {
                    Ok(s) => s.velocity,
                    Err(_) => Vector3::repeat(f64::NAN),
                },
                t,
                &x,
                opts.t_max,
                &mut events,
                &ctrl,
                &tol,
                opts.divergence_bound,
                |yy| {
                    // project back onto the switching surface along grad H
                    for _ in 0..2 {
                        let h = model.h(yy, &p);
                        let g = model.grad_h(yy, &p);
                        let gg = g.norm_squared();
                        if gg > 0.0 {
                            *yy -= g * (h / gg);
                        }
                    }
                },
                |tt, yy| record(tt, yy, &mut seg, &mut first_point),
            )?,
        };

        t = res.t;
        x = res.y;

        match res.end {
            LegEnd::TimeEnd => break,
            LegEnd::Diverged { t: td, norm } => {
                traj.segments.push(seg);
                return Err(Error::Divergence { t: td, norm });
            }
            LegEnd::Event { index, t: te, y } => {
                event_count += 1;
                if event_count > opts.max_events {
                    traj.segments.push(seg);
                    return Err(Error::ZenoGuard {
                        max_events: opts.max_events,
                    });
                }
                match labels[index] {
                    LegLabel::Section(i) => {
                        traj.events.push(TrajEvent {
                            t: te,
                            kind: EventKind::SectionHit,
                            state: y,
                            section_index: Some(i),
                        });
                        // same regime; continue the current segment
                        continue;
                    }
                    LegLabel::HCross => {
                        let c = classify_surface_point(model, &y, &p, opts.event_tol * 100.0)?;
                        let from = regime;
                        let next = match c.kind {
                            SurfaceKind::AttractingSliding => {
                                traj.events.push(TrajEvent {
                                    t: te,
                                    kind: EventKind::SlideEntry,
                                    state: y,
                                    section_index: None,
                                });
                                Regime::Sliding
                            }
                            SurfaceKind::Crossing | SurfaceKind::RepellingSliding => {
                                let (kind, next) = if from == Regime::Left {
                                    (EventKind::CrossLtoR, Regime::Right)
                                } else {
                                    (EventKind::CrossRtoL, Regime::Left)
                                };
                                traj.events.push(TrajEvent {
                                    t: te,
                                    kind,
                                    state: y,
                                    section_index: None,
                                });
                                next
                            }
                            // grazing touch: stay on the current side
                            SurfaceKind::TangencyRight | SurfaceKind::TangencyLeft => from,
                        };
                        if next != regime {
                            traj.segments.push(std::mem::replace(
                                &mut seg,
                                Segment {
                                    regime: next,
                                    times: vec![],
                                    states: vec![],
                                },
                            ));
                            regime = next;
                        }
                    }
                    LegLabel::FoldExit => {
                        traj.events.push(TrajEvent {
                            t: te,
                            kind: EventKind::SlideExitFold,
                            state: y,
                            section_index: None,
                        });
                        // the fold lies on Omega; record matching section hits
                        for (i, s) in sections.iter().enumerate() {
                            if matches!(s.kind, SectionKind::Omega) && s.direction >= 0 {
                                traj.events.push(TrajEvent {
                                    t: te,
                                    kind: EventKind::SectionHit,
                                    state: y,
                                    section_index: Some(i),
                                });
                            }
                        }
                        traj.segments.push(std::mem::replace(
                            &mut seg,
                            Segment {
                                regime: Regime::Right,
                                times: vec![],
                                states: vec![],
                            },
                        ));
                        regime = Regime::Right;
                    }
                    LegLabel::LeftExit => {
                        traj.events.push(TrajEvent {
                            t: te,
                            kind: EventKind::SlideExitLeft,
                            state: y,
                            section_index: None,
                        });
                        traj.segments.push(std::mem::replace(
                            &mut seg,
                            Segment {
                                regime: Regime::Left,
                                times: vec![],
                                states: vec![],
                            },
                        ));
                        regime = Regime::Left;
                    }
                }
            }
        }
    }
    if !seg.times.is_empty() {
        traj.segments.push(seg);
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::builtins::toy_model;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    #[test]
    fn pure_right_jordan_flow_matches_closed_form() {
        // right field in real Jordan form with beta=1, gamma=-0.2 and a
        // surface far away; flowing (1,0,1) for pi/2 gives (0,-1,e^{-pi/10})
        let fr = Arc::new(|x: &Vector3<f64>, _p: &Params| {
            Vector3::new(x[1], -x[0], -0.2 * x[2])
        });
        let fl = Arc::new(|_x: &Vector3<f64>, _p: &Params| Vector3::new(0.0, 0.0, 1.0));
        let m = FilippovModel::new(
            "jordan",
            ["nu", "eta"],
            fl,
            fr,
            Arc::new(|x: &Vector3<f64>, _p: &Params| x[0] + 100.0),
        );
        let traj = integrate_hybrid(
            &m,
            &Vector3::new(1.0, 0.0, 1.0),
            &[0.0, 0.0],
            std::f64::consts::FRAC_PI_2,
            &[],
            &ToleranceConfig::default(),
        )
        .unwrap();
        let (_, xf) = traj.final_state().unwrap();
        assert_abs_diff_eq!(xf[0], 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(xf[1], -1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(xf[2], (-0.1 * std::f64::consts::PI).exp(), epsilon = 1e-8);
    }

    #[test]
    fn toy_spiral_converges_to_stable_equilibrium() {
        // (nu, eta) = (0.5, -0.1): the admissible equilibrium at the origin
        // is stable and attracts nearby orbits
        let m = toy_model();
        let traj = integrate_hybrid(
            &m,
            &Vector3::new(0.05, 0.05, 0.02),
            &[0.5, -0.1],
            300.0,
            &[],
            &ToleranceConfig::default(),
        )
        .unwrap();
        let (_, xf) = traj.final_state().unwrap();
        assert!(xf.norm() < 1e-4, "|x| = {}", xf.norm());
    }

    #[test]
    fn toy_chaotic_attractor_has_sliding_segments() {
        // (nu, eta) = (0.2, 0.2): the attractor involves recurring sliding
        let m = toy_model();
        let traj = integrate_hybrid(
            &m,
            &Vector3::new(0.05, 0.0, 0.0),
            &[0.2, 0.2],
            200.0,
            &[],
            &ToleranceConfig::default(),
        )
        .unwrap();
        assert!(traj.has_sliding());
        // regime invariants: h has the right sign inside each regime, and
        // sliding stays on the surface
        for segm in &traj.segments {
            for (t, x) in segm.times.iter().zip(&segm.states) {
                let h = m.h(x, &[0.2, 0.2]);
                match segm.regime {
                    Regime::Left => assert!(h <= 1e-9, "t={t} h={h}"),
                    Regime::Right => assert!(h >= -1e-9, "t={t} h={h}"),
                    Regime::Sliding => assert!(h.abs() <= 1e-9, "t={t} h={h}"),
                }
            }
        }
        // sliding exits pass through the fold: L_R h = 0 there
        for e in traj.events.iter().filter(|e| e.kind == EventKind::SlideExitFold) {
            let lr = m.lie_derivative(Side::Right, &e.state, &[0.2, 0.2]);
            assert!(lr.abs() < 1e-7, "fold exit with L_R h = {lr}");
        }
        // continuity across segment boundaries
        for w in traj.segments.windows(2) {
            let a = w[0].states.last().unwrap();
            let b = w[1].states.first().unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn sliding_convexity_along_stored_segments() {
        let m = toy_model();
        let p = [0.2, 0.2];
        let traj = integrate_hybrid(
            &m,
            &Vector3::new(0.05, 0.0, 0.0),
            &p,
            150.0,
            &[],
            &ToleranceConfig::default(),
        )
        .unwrap();
        let mut checked = 0;
        for segm in traj.segments.iter().filter(|s| s.regime == Regime::Sliding) {
            for x in &segm.states {
                let s = sliding_field_unchecked(&m, x, &p).unwrap();
                assert!(
                    (-1e-9..=1.0 + 1e-9).contains(&s.convex_lambda),
                    "lambda = {}",
                    s.convex_lambda
                );
                checked += 1;
            }
        }
        assert!(checked > 10);
    }

    #[test]
    fn event_consistency_at_crossings() {
        let m = toy_model();
        let p = [0.2, 0.2];
        let traj = integrate_hybrid(
            &m,
            &Vector3::new(0.05, 0.0, 0.0),
            &p,
            150.0,
            &[],
            &ToleranceConfig::default(),
        )
        .unwrap();
        for e in &traj.events {
            match e.kind {
                EventKind::CrossLtoR => {
                    assert!(m.lie_derivative(Side::Left, &e.state, &p) > 0.0);
                    assert!(m.lie_derivative(Side::Right, &e.state, &p) > 0.0);
                }
                EventKind::SlideEntry => {
                    let c = classify_surface_point(&m, &e.state, &p, 1e-7).unwrap();
                    assert_eq!(c.kind, SurfaceKind::AttractingSliding);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn section_hits_are_recorded_with_direction() {
        let m = toy_model();
        let p = [0.5, -0.1];
        let traj = integrate_hybrid(
            &m,
            &Vector3::new(0.05, 0.05, 0.0),
            &p,
            40.0,
            &[Section::omega(1)],
            &ToleranceConfig::default(),
        )
        .unwrap();
        let hits: Vec<_> = traj.section_hits(0).collect();
        assert!(hits.len() >= 4, "expected several omega crossings");
        for h in hits {
            let lr = m.lie_derivative(Side::Right, &h.state, &p);
            assert!(lr.abs() < 1e-7);
            // upward crossing: the second Lie derivative is positive
            assert!(m.lie_derivative2(&h.state, &p) > 0.0);
        }
    }

    #[test]
    fn divergence_guard_fires() {
        let fr = Arc::new(|x: &Vector3<f64>, _p: &Params| *x * 2.0);
        let fl = fr.clone();
        let m = FilippovModel::new(
            "exp",
            ["a", "b"],
            fl,
            fr,
            Arc::new(|x: &Vector3<f64>, _p: &Params| x[0] + 1e3),
        );
        let e = integrate_hybrid(
            &m,
            &Vector3::new(1.0, 0.0, 0.0),
            &[0.0, 0.0],
            100.0,
            &[],
            &ToleranceConfig::default(),
        )
        .unwrap_err();
        assert_eq!(e.kind(), "Divergence");
    }

    #[test]
    fn grid_refinement_changes_section_hits_within_tolerance() {
        let m = toy_model();
        let p = [0.5, -0.1];
        let run = |rtol: f64| {
            let mut opts = IntegrateOptions::new(30.0);
            opts.rtol = rtol;
            opts.atol = rtol * 1e-2;
            integrate_hybrid_opts(
                &m,
                &Vector3::new(0.05, 0.05, 0.0),
                &p,
                &[Section::omega(1)],
                &opts,
            )
            .unwrap()
        };
        let coarse = run(1e-8);
        let fine = run(5e-9);
        let ch: Vec<_> = coarse.section_hits(0).collect();
        let fh: Vec<_> = fine.section_hits(0).collect();
        assert_eq!(ch.len(), fh.len());
        for (a, b) in ch.iter().zip(&fh) {
            assert!((a.state - b.state).norm() < 1e-8);
        }
    }
}
