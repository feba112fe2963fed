//! Region-boundary curves of the reduced map's attractor atlas, located by
//! root-finding the defining point conditions along one parameter line.

use super::{g_left, g_right, special_points, BcnfParams};
use crate::error::{Error, Result};
use crate::numerics::{scalar_root_bracketed, ToleranceConfig};
use nalgebra::Vector2;
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryKind {
    /// closed form: tau_R = 2 / (1 - tau_L)
    PeriodTwoExistence,
    /// g_L(U3) = P*: the attractor splits into twice as many components
    FirstTurquoise,
    /// g_L(U3) = U1: the attractor gains a limb discontinuously
    FirstOlive,
    /// x-component of (g_R^k . g_L^2)(0,0) = 0: limb endpoints touch the
    /// switching line
    PurpleK(u32),
    CurveA,
    CurveB,
    CurveC,
    CurveD,
    CurveE,
    CurveF,
    CurveG,
    CurveH,
}

impl BoundaryKind {
    pub fn label(&self) -> String {
        match self {
            BoundaryKind::PeriodTwoExistence => "period-two-existence".into(),
            BoundaryKind::FirstTurquoise => "first-turquoise".into(),
            BoundaryKind::FirstOlive => "first-olive".into(),
            BoundaryKind::PurpleK(k) => format!("purple-{k}"),
            BoundaryKind::CurveA => "curve-a".into(),
            BoundaryKind::CurveB => "curve-b".into(),
            BoundaryKind::CurveC => "curve-c".into(),
            BoundaryKind::CurveD => "curve-d".into(),
            BoundaryKind::CurveE => "curve-e".into(),
            BoundaryKind::CurveF => "curve-f".into(),
            BoundaryKind::CurveG => "curve-g".into(),
            BoundaryKind::CurveH => "curve-h".into(),
        }
    }

    pub fn parse(s: &str) -> Option<BoundaryKind> {
        Some(match s {
            "period-two-existence" => BoundaryKind::PeriodTwoExistence,
            "first-turquoise" => BoundaryKind::FirstTurquoise,
            "first-olive" => BoundaryKind::FirstOlive,
            "curve-a" => BoundaryKind::CurveA,
            "curve-b" => BoundaryKind::CurveB,
            "curve-c" => BoundaryKind::CurveC,
            "curve-d" => BoundaryKind::CurveD,
            "curve-e" => BoundaryKind::CurveE,
            "curve-f" => BoundaryKind::CurveF,
            "curve-g" => BoundaryKind::CurveG,
            "curve-h" => BoundaryKind::CurveH,
            other => {
                let k = other.strip_prefix("purple-")?.parse().ok()?;
                BoundaryKind::PurpleK(k)
            }
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum FixedCoord {
    TauL(f64),
    TauR(f64),
}

/// Defining residual of each boundary condition at one parameter point.
/// Conditions ending in the left branch compare x-components only, since
/// both sides lie on the x-axis.
fn residual(kind: BoundaryKind, p: &BcnfParams) -> Result<f64> {
    let sp = special_points(p)?;
    Ok(match kind {
        BoundaryKind::PeriodTwoExistence => p.tau_r - 2.0 / (1.0 - p.tau_l),
        BoundaryKind::FirstTurquoise => g_left(p, &sp.u3)[0] - sp.p_star[0],
        BoundaryKind::FirstOlive => g_left(p, &sp.u3)[0] - sp.u1[0],
        BoundaryKind::PurpleK(k) => {
            let mut z = Vector2::new(0.0, 0.0);
            z = g_left(p, &z);
            z = g_left(p, &z);
            for _ in 0..k {
                z = g_right(p, &z);
            }
            z[0]
        }
        BoundaryKind::CurveA => g_left(p, &g_right(p, &g_right(p, &sp.u3)))[0] - sp.p_star[0],
        BoundaryKind::CurveB => g_left(p, &g_right(p, &g_right(p, &sp.u3)))[0] - sp.v_point[0],
        BoundaryKind::CurveC => g_left(p, &g_right(p, &g_right(p, &sp.u3)))[0] - sp.w_right[0],
        BoundaryKind::CurveD => sp.v_point[0] - sp.p_star[0],
        BoundaryKind::CurveE => g_left(p, &g_left(p, &sp.v_point))[0] - sp.w_right[0],
        BoundaryKind::CurveF => sp.v_point[0],
        BoundaryKind::CurveG | BoundaryKind::CurveH => {
            let mut z = g_right(p, &sp.v_point);
            z = g_left(p, &z);
            z = g_right(p, &z);
            z = g_right(p, &z);
            z = g_right(p, &z);
            z = g_left(p, &z);
            match kind {
                BoundaryKind::CurveG => z[0] - sp.w_right[0],
                _ => z[0] - sp.v_point[0],
            }
        }
    })
}

/// Root-find a boundary curve at one fixed coordinate, searching the given
/// range of the free coordinate.
pub fn region_boundary_in(
    kind: BoundaryKind,
    fixed: FixedCoord,
    search: (f64, f64),
    tol: &ToleranceConfig,
) -> Result<f64> {
    // closed form where available
    if let BoundaryKind::PeriodTwoExistence = kind {
        return Ok(match fixed {
            FixedCoord::TauL(tl) => 2.0 / (1.0 - tl),
            FixedCoord::TauR(tr) => 1.0 - 2.0 / tr,
        });
    }
    let f = |free: f64| -> f64 {
        let p = match fixed {
            FixedCoord::TauL(tl) => BcnfParams::new(tl, free),
            FixedCoord::TauR(tr) => BcnfParams::new(free, tr),
        };
        residual(kind, &p).unwrap_or(f64::NAN)
    };
    // scan for a sign change, then polish with the bracketed solver;
    // sign changes across poles (the formulas have 1/tau_R factors) are
    // rejected by checking the residual actually vanishes
    let n = 400;
    let (lo, hi) = search;
    let mut prev_x = lo;
    let mut prev_f = f(lo);
    for i in 1..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let fx = f(x);
        if prev_f.is_finite() && fx.is_finite() && prev_f * fx <= 0.0 {
            let root = scalar_root_bracketed(f, prev_x, x, tol)?;
            if f(root).abs() < 1e-6 * prev_f.abs().min(fx.abs()).max(1.0) {
                return Ok(root);
            }
        }
        prev_x = x;
        prev_f = fx;
    }
    Err(Error::NoBracket { lo, hi })
}

/// As `region_boundary_in` with the default atlas window for the free
/// coordinate.
pub fn region_boundary(kind: BoundaryKind, fixed: FixedCoord, tol: &ToleranceConfig) -> Result<f64> {
    let search = match fixed {
        FixedCoord::TauL(_) => (-0.99, 4.99),  // free coordinate is tau_R
        FixedCoord::TauR(_) => (-4.49, 0.99),  // free coordinate is tau_L
    };
    region_boundary_in(kind, fixed, search, tol)
}

/// One row of a boundary-curve table.
#[derive(Debug, Clone)]
pub struct BoundaryRow {
    pub kind: BoundaryKind,
    pub fixed_coord: f64,
    pub solved_coord: f64,
}

/// CSV export: kind, fixed_coord, solved_coord.
pub fn boundaries_to_csv<W: Write>(rows: &[BoundaryRow], w: &mut W) -> io::Result<()> {
    writeln!(w, "kind,fixed_coord,solved_coord")?;
    for r in rows {
        writeln!(
            w,
            "{},{:.16e},{:.16e}",
            r.kind.label(),
            r.fixed_coord,
            r.solved_coord
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tol() -> ToleranceConfig {
        ToleranceConfig::default()
    }

    #[test]
    fn period_two_existence_closed_form() {
        let v = region_boundary(
            BoundaryKind::PeriodTwoExistence,
            FixedCoord::TauL(-3.0),
            &tol(),
        )
        .unwrap();
        assert_abs_diff_eq!(v, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn first_olive_at_tau_l_minus_three() {
        // the defining equation reduces to tau_R (tau_L+1)(1-tau_L) = 2 tau_L + 1,
        // giving tau_R = 5/8 at tau_L = -3
        let v = region_boundary(BoundaryKind::FirstOlive, FixedCoord::TauL(-3.0), &tol()).unwrap();
        assert_abs_diff_eq!(v, 0.625, epsilon = 1e-10);
    }

    #[test]
    fn curve_f_is_tau_r_half() {
        for tl in [-1.3, -2.0, -3.5] {
            let v = region_boundary(BoundaryKind::CurveF, FixedCoord::TauL(tl), &tol()).unwrap();
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-10);
        }
    }

    #[test]
    fn first_turquoise_satisfies_its_equation() {
        let tl = -1.5;
        let tr = region_boundary(BoundaryKind::FirstTurquoise, FixedCoord::TauL(tl), &tol())
            .unwrap();
        let p = BcnfParams::new(tl, tr);
        let sp = special_points(&p).unwrap();
        let img = g_left(&p, &sp.u3);
        assert!((img - sp.p_star).norm() < 1e-9);
        // independent algebra: g_L(U3).x is linear in tau_R
        assert_abs_diff_eq!(tr, 1.12, epsilon = 1e-10);
    }

    #[test]
    fn purple_curves_order_below_tau_r_one() {
        let tl = -2.5;
        let p1 = region_boundary(BoundaryKind::PurpleK(1), FixedCoord::TauL(tl), &tol()).unwrap();
        let p2 = region_boundary(BoundaryKind::PurpleK(2), FixedCoord::TauL(tl), &tol()).unwrap();
        assert!(p1 < 1.0 && p2 < 1.0);
        assert_ne!(p1, p2);
        // purple-1 in closed form: g_L^2(0,0) = (-tau_L - 1, 0), and one
        // right step gives x = tau_R(-tau_L - 1) - 1 = 0, so tau_R = 2/3
        assert_abs_diff_eq!(p1, 1.0 / 1.5, epsilon = 1e-10);
    }

    #[test]
    fn missing_root_reports_no_bracket() {
        // curve-f has no root when searching the tau_L coordinate at a
        // tau_R where V never hits the origin
        let e = region_boundary(BoundaryKind::CurveF, FixedCoord::TauR(2.0), &tol()).unwrap_err();
        assert_eq!(e.kind(), "NoBracket");
    }
}
