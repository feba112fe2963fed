//! The reduced two-parameter border-collision normal form: a continuous
//! piecewise-linear planar map whose left piece collapses onto the x-axis
//! and whose right piece has determinant `tau_R - 1`, with border
//! parameter fixed at -1. Iteration, special points, attractor
//! classification over the parameter plane, and the region-boundary
//! curves.

pub mod boundaries;
pub mod classify;

pub use boundaries::{boundaries_to_csv, region_boundary, region_boundary_in, BoundaryKind, BoundaryRow, FixedCoord};
pub use classify::{classify_attractor, scan_plane, AttractorKind, BcnfClassification, ClassifyOptions, ScanGrid};

use crate::error::{Error, Result};
use nalgebra::Vector2;

/// Parameters of the reduced family.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BcnfParams {
    pub tau_l: f64,
    pub tau_r: f64,
}

impl BcnfParams {
    pub fn new(tau_l: f64, tau_r: f64) -> Self {
        BcnfParams { tau_l, tau_r }
    }
}

/// The full four-parameter form with border parameter `mu`, used when a
/// grazing-sliding curve supplies finite-distance parameter values.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct FullBcnf {
    pub tau_l: f64,
    pub delta_l: f64,
    pub tau_r: f64,
    pub delta_r: f64,
    pub mu: f64,
}

impl FullBcnf {
    pub fn step(&self, z: &Vector2<f64>) -> Vector2<f64> {
        let (x, y) = (z[0], z[1]);
        if x <= 0.0 {
            Vector2::new(self.tau_l * x + y + self.mu, -self.delta_l * x)
        } else {
            Vector2::new(self.tau_r * x + y + self.mu, -self.delta_r * x)
        }
    }
}

impl From<BcnfParams> for FullBcnf {
    fn from(p: BcnfParams) -> Self {
        FullBcnf {
            tau_l: p.tau_l,
            delta_l: 0.0,
            tau_r: p.tau_r,
            delta_r: p.tau_r - 1.0,
            mu: -1.0,
        }
    }
}

/// Left piece of the reduced map (maps everything to the x-axis).
pub fn g_left(p: &BcnfParams, z: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(p.tau_l * z[0] + z[1] - 1.0, 0.0)
}

/// Right piece of the reduced map.
pub fn g_right(p: &BcnfParams, z: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(p.tau_r * z[0] + z[1] - 1.0, (1.0 - p.tau_r) * z[0])
}

/// One step of the reduced map: the left piece applies for x <= 0, the
/// right piece for x >= 0 (both agree on the switching line).
pub fn bcnf_step(p: &BcnfParams, z: &Vector2<f64>) -> Vector2<f64> {
    if z[0] <= 0.0 {
        g_left(p, z)
    } else {
        g_right(p, z)
    }
}

/// The closed-form special points of the reduced family.
#[derive(Debug, Clone, Copy)]
pub struct SpecialPoints {
    /// fixed point of the left piece
    pub p_star: Vector2<f64>,
    /// period-two point in the left half-plane
    pub w_left: Vector2<f64>,
    /// period-two point in the right half-plane
    pub w_right: Vector2<f64>,
    /// first three images of the origin
    pub u1: Vector2<f64>,
    pub u2: Vector2<f64>,
    pub u3: Vector2<f64>,
    /// image of the switching-line intersection of segment U1-U3
    pub v_point: Vector2<f64>,
}

pub fn special_points(p: &BcnfParams) -> Result<SpecialPoints> {
    if (p.tau_l - 1.0).abs() < 1e-14 {
        return Err(Error::DegenerateDenominator("special_points: tau_L = 1".into()));
    }
    if p.tau_r.abs() < 1e-14 {
        return Err(Error::DegenerateDenominator("special_points: tau_R = 0".into()));
    }
    let (tl, tr) = (p.tau_l, p.tau_r);
    Ok(SpecialPoints {
        p_star: Vector2::new(1.0 / (tl - 1.0), 0.0),
        w_left: Vector2::new(
            2.0 / (tl - 1.0),
            -(tl + 1.0) * (tr - 1.0) / (tr * (tl - 1.0)),
        ),
        w_right: Vector2::new((tl + 1.0) / (tr * (tl - 1.0)), 0.0),
        u1: Vector2::new(-1.0, 0.0),
        u2: Vector2::new(-tl - 1.0, 0.0),
        u3: Vector2::new(-tr * (tl + 1.0) - 1.0, (tr - 1.0) * (tl + 1.0)),
        v_point: Vector2::new(1.0 / tr - 2.0, 0.0),
    })
}

/// One row of an orbit diagram along a parameter path.
#[derive(Debug, Clone)]
pub struct OrbitDiagramRow {
    pub index: usize,
    pub x_values: Vec<f64>,
    pub diverged: bool,
}

/// Iterate each parameter tuple from the origin and keep the last `keep`
/// x-values; rows that escape the divergence bound are flagged.
pub fn bcnf_orbit_diagram(path: &[FullBcnf], iterates: usize, keep: usize) -> Vec<OrbitDiagramRow> {
    let keep = keep.min(iterates);
    path.iter()
        .enumerate()
        .map(|(index, m)| {
            let mut z = Vector2::new(0.0, 0.0);
            let mut xs = Vec::with_capacity(keep);
            let mut diverged = false;
            for i in 0..iterates {
                z = m.step(&z);
                if z.norm() > 1e6 {
                    diverged = true;
                    break;
                }
                if i + keep >= iterates {
                    xs.push(z[0]);
                }
            }
            OrbitDiagramRow {
                index,
                x_values: if diverged { vec![] } else { xs },
                diverged,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn continuity_on_the_switching_line() {
        let p = BcnfParams::new(-1.7, 2.3);
        for y in [-2.0, -0.5, 0.0, 0.3, 10.0] {
            let z = Vector2::new(0.0, y);
            let l = g_left(&p, &z);
            let r = g_right(&p, &z);
            assert_eq!(l, r);
            assert_eq!(l, Vector2::new(y - 1.0, 0.0));
        }
    }

    #[test]
    fn left_branch_collapses_to_axis() {
        let p = BcnfParams::new(0.37, -1.9);
        for z in [
            Vector2::new(-3.0, 2.0),
            Vector2::new(-0.1, -7.5),
            Vector2::new(-42.0, 0.125),
        ] {
            assert_eq!(g_left(&p, &z)[1], 0.0);
        }
    }

    #[test]
    fn fixed_point_of_left_piece() {
        let p = BcnfParams::new(0.5, 1.7);
        let z = Vector2::new(-2.0, 0.0);
        assert_eq!(bcnf_step(&p, &z), z);
        let sp = special_points(&p).unwrap();
        assert_eq!(sp.p_star, z);
    }

    #[test]
    fn period_two_orbit_closes() {
        let p = BcnfParams::new(-2.0, 1.5);
        let sp = special_points(&p).unwrap();
        assert_abs_diff_eq!(sp.w_right[0], 2.0 / 9.0, epsilon = 1e-15);
        let img = bcnf_step(&p, &sp.w_right);
        assert!((img - sp.w_left).norm() < 1e-15);
        assert_abs_diff_eq!(sp.w_left[0], -2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(sp.w_left[1], -1.0 / 9.0, epsilon = 1e-15);
        let back = bcnf_step(&p, &sp.w_left);
        assert!((back - sp.w_right).norm() < 1e-15);
    }

    #[test]
    fn images_of_origin_match_iteration() {
        let p = BcnfParams::new(-2.0, 1.5);
        let sp = special_points(&p).unwrap();
        assert_eq!(sp.u3, Vector2::new(0.5, -0.5));
        let z1 = bcnf_step(&p, &Vector2::new(0.0, 0.0));
        let z2 = bcnf_step(&p, &z1);
        let z3 = bcnf_step(&p, &z2);
        assert!((z1 - sp.u1).norm() < 1e-15);
        assert!((z2 - sp.u2).norm() < 1e-15);
        assert!((z3 - sp.u3).norm() < 1e-15);
    }

    #[test]
    fn v_point_at_tau_r_two() {
        let p = BcnfParams::new(-2.0, 2.0);
        let sp = special_points(&p).unwrap();
        assert_eq!(sp.v_point, Vector2::new(-1.5, 0.0));
    }

    #[test]
    fn tau_l_zero_collapses_u2_onto_u1() {
        let p = BcnfParams::new(0.0, 1.5);
        let sp = special_points(&p).unwrap();
        assert_eq!(sp.u2, sp.u1);
    }

    #[test]
    fn orbit_diagram_constant_fixed_point_path() {
        let p: FullBcnf = BcnfParams::new(0.5, 2.0).into();
        let rows = bcnf_orbit_diagram(&[p], 1000, 50);
        assert_eq!(rows[0].x_values.len(), 50);
        for x in &rows[0].x_values {
            assert_abs_diff_eq!(*x, -2.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn orbit_diagram_flags_divergence() {
        let p: FullBcnf = BcnfParams::new(2.0, 3.0).into();
        let rows = bcnf_orbit_diagram(&[p], 1000, 50);
        assert!(rows[0].diverged);
    }

    proptest! {
        #[test]
        fn half_plane_placement_of_period_two(
            tau_l in -4.0f64..-1.05,
            frac in 0.05f64..0.95,
        ) {
            let tau_r = frac * 2.0 / (1.0 - tau_l);
            let sp = special_points(&BcnfParams::new(tau_l, tau_r)).unwrap();
            prop_assert!(sp.w_left[0] < 0.0);
            prop_assert!(sp.w_right[0] > 0.0);
        }

        #[test]
        fn fixed_point_stability_iff_tau_l_in_unit_interval(
            tau_l in -3.0f64..3.0,
            tau_r in -1.0f64..4.0,
            seed_x in -0.4f64..0.4,
            seed_y in -0.4f64..0.4,
        ) {
            prop_assume!((tau_l.abs() - 1.0).abs() > 0.05);
            prop_assume!((tau_l - 1.0).abs() > 0.05);
            let p = BcnfParams::new(tau_l, tau_r);
            let sp = special_points(&p).unwrap();
            let mut z = sp.p_star + Vector2::new(seed_x, seed_y) * 1e-3;
            let mut converged = false;
            for _ in 0..2000 {
                z = bcnf_step(&p, &z);
                if !z.iter().all(|v| v.is_finite()) || z.norm() > 1e7 {
                    break;
                }
                if (z - sp.p_star).norm() < 1e-10 {
                    converged = true;
                    break;
                }
            }
            prop_assert_eq!(converged, tau_l.abs() < 1.0);
        }
    }
}
