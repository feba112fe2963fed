//! The three built-in systems: a minimal pedagogical model, and the
//! Hastings-Powell food chain under two kinds of threshold control.

use crate::error::{Error, Result};
use crate::filippov::{FilippovModel, Params};
use nalgebra::{Matrix3, Vector3};
use std::collections::BTreeMap;
use std::sync::Arc;

/// The minimal example: a constant left field, a planar oscillator with a
/// decaying third coordinate on the right, and a tilted switching plane.
/// Bifurcation parameters are `(nu, eta)`.
pub fn toy_model() -> FilippovModel {
    let f_left = Arc::new(|_x: &Vector3<f64>, _p: &Params| Vector3::new(0.0, -2.0, 1.0));
    let f_right = Arc::new(|x: &Vector3<f64>, p: &Params| {
        Vector3::new(
            x[1],
            -x[0] + p[1] * x[1] - x[1] * x[1] * x[1],
            -x[2] / 5.0,
        )
    });
    let h = Arc::new(|x: &Vector3<f64>, p: &Params| p[0] - x[0] - 2.0 * x[1] - 3.0 * x[2]);
    let grad_h = Arc::new(|_x: &Vector3<f64>, _p: &Params| Vector3::new(-1.0, -2.0, -3.0));
    let jac = Arc::new(|x: &Vector3<f64>, p: &Params| {
        Matrix3::new(
            0.0,
            1.0,
            0.0,
            -1.0,
            p[1] - 3.0 * x[1] * x[1],
            0.0,
            0.0,
            0.0,
            -0.2,
        )
    });
    FilippovModel::new("toy", ["nu", "eta"], f_left, f_right, h)
        .with_grad_h(grad_h)
        .with_jac_right(jac)
}

/// Fixed parameters of the food chain and its control term.
#[derive(Debug, Clone, Copy)]
pub struct FoodChainParams {
    pub a1: f64,
    pub a2: f64,
    pub b2: f64,
    pub d1: f64,
    pub d2: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
}

impl FoodChainParams {
    /// Baseline food-chain constants shared by both control variants.
    pub fn baseline() -> Self {
        FoodChainParams {
            a1: 5.0,
            a2: 0.1,
            b2: 2.0,
            d1: 0.4,
            d2: 0.01,
            q1: 0.0,
            q2: 0.0,
            q3: 0.0,
        }
    }

    /// Pest-control killing rates (enemies of the pest are released, so
    /// q3 < 0).
    pub fn pest() -> Self {
        FoodChainParams {
            q1: 0.0,
            q2: 0.05,
            q3: -0.01,
            ..FoodChainParams::baseline()
        }
    }

    /// Harvesting rates for the prey-threshold variant.
    pub fn harvest() -> Self {
        FoodChainParams {
            q1: 0.09,
            q2: 0.01,
            q3: 0.001,
            ..FoodChainParams::baseline()
        }
    }

    fn set(&mut self, name: &str, value: f64) -> Result<()> {
        match name {
            "a1" => self.a1 = value,
            "a2" => self.a2 = value,
            "b2" => self.b2 = value,
            "d1" => self.d1 = value,
            "d2" => self.d2 = value,
            "q1" => self.q1 = value,
            "q2" => self.q2 = value,
            "q3" => self.q3 = value,
            other => return Err(Error::UnknownParameter(other.into())),
        }
        Ok(())
    }
}

fn food_chain_right(c: FoodChainParams) -> Arc<crate::filippov::FieldFn> {
    Arc::new(move |x: &Vector3<f64>, p: &Params| {
        let b1 = p[1];
        let f1 = c.a1 * x[0] / (1.0 + b1 * x[0]);
        let f2 = c.a2 * x[1] / (1.0 + c.b2 * x[1]);
        Vector3::new(
            x[0] * (1.0 - x[0]) - f1 * x[1],
            f1 * x[1] - f2 * x[2] - c.d1 * x[1],
            f2 * x[2] - c.d2 * x[2],
        )
    })
}

fn food_chain_left(c: FoodChainParams) -> Arc<crate::filippov::FieldFn> {
    let right = food_chain_right(c);
    Arc::new(move |x: &Vector3<f64>, p: &Params| {
        right(x, p) - Vector3::new(c.q1 * x[0], c.q2 * x[1], c.q3 * x[2])
    })
}

fn food_chain_jac(c: FoodChainParams) -> Arc<crate::filippov::JacFn> {
    Arc::new(move |x: &Vector3<f64>, p: &Params| {
        let b1 = p[1];
        let f1 = c.a1 * x[0] / (1.0 + b1 * x[0]);
        let f2 = c.a2 * x[1] / (1.0 + c.b2 * x[1]);
        let df1 = c.a1 / (1.0 + b1 * x[0]).powi(2);
        let df2 = c.a2 / (1.0 + c.b2 * x[1]).powi(2);
        Matrix3::new(
            1.0 - 2.0 * x[0] - df1 * x[1],
            -f1,
            0.0,
            df1 * x[1],
            f1 - df2 * x[2] - c.d1,
            -f2,
            0.0,
            df2 * x[2],
            f2 - c.d2,
        )
    })
}

/// Food chain with control applied while the top population `X3` is below
/// the threshold `xi`. Bifurcation parameters are `(xi, b1)`.
pub fn pest_model_with(c: FoodChainParams) -> FilippovModel {
    let h = Arc::new(|x: &Vector3<f64>, p: &Params| x[2] - p[0]);
    let grad_h = Arc::new(|_x: &Vector3<f64>, _p: &Params| Vector3::new(0.0, 0.0, 1.0));
    FilippovModel::new(
        "hastings_powell_pest",
        ["xi", "b1"],
        food_chain_left(c),
        food_chain_right(c),
        h,
    )
    .with_grad_h(grad_h)
    .with_jac_right(food_chain_jac(c))
}

pub fn pest_model() -> FilippovModel {
    pest_model_with(FoodChainParams::pest())
}

/// Food chain with harvesting applied while the prey population `X1`
/// exceeds the threshold `xi`. Bifurcation parameters are `(xi, b1)`.
pub fn harvest_model_with(c: FoodChainParams) -> FilippovModel {
    let h = Arc::new(|x: &Vector3<f64>, p: &Params| p[0] - x[0]);
    let grad_h = Arc::new(|_x: &Vector3<f64>, _p: &Params| Vector3::new(-1.0, 0.0, 0.0));
    FilippovModel::new(
        "hastings_powell_harvest",
        ["xi", "b1"],
        food_chain_left(c),
        food_chain_right(c),
        h,
    )
    .with_grad_h(grad_h)
    .with_jac_right(food_chain_jac(c))
}

pub fn harvest_model() -> FilippovModel {
    harvest_model_with(FoodChainParams::harvest())
}

/// Resolve a built-in model by name, applying fixed-parameter overrides.
pub fn builtin_model(name: &str, overrides: &BTreeMap<String, f64>) -> Result<FilippovModel> {
    match name {
        "toy" => {
            if let Some(k) = overrides.keys().next() {
                return Err(Error::UnknownParameter(k.clone()));
            }
            Ok(toy_model())
        }
        "hastings_powell_pest" | "pest" => {
            let mut c = FoodChainParams::pest();
            for (k, v) in overrides {
                c.set(k, *v)?;
            }
            Ok(pest_model_with(c))
        }
        "hastings_powell_harvest" | "harvest" => {
            let mut c = FoodChainParams::harvest();
            for (k, v) in overrides {
                c.set(k, *v)?;
            }
            Ok(harvest_model_with(c))
        }
        other => Err(Error::UnknownModel(other.into())),
    }
}

/// Reasonable starting guesses for the codimension-two point of each
/// built-in: parameter pair and equilibrium.
pub fn builtin_codim2_guess(name: &str) -> Option<([f64; 2], Vector3<f64>)> {
    match name {
        "toy" => Some(([0.0, 0.0], Vector3::zeros())),
        "hastings_powell_pest" | "pest" => {
            Some(([13.2, 2.114], Vector3::new(0.76, 0.125, 13.2)))
        }
        "hastings_powell_harvest" | "harvest" => {
            Some(([0.76, 2.114], Vector3::new(0.76, 0.125, 13.2)))
        }
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn toy_left_field_is_constant() {
        let m = toy_model();
        let v = m.f_left(&Vector3::new(3.0, -1.0, 7.0), &[0.4, 0.1]);
        assert_eq!(v, Vector3::new(0.0, -2.0, 1.0));
    }

    #[test]
    fn pest_switching_function_vanishes_at_threshold() {
        let m = pest_model();
        let xi = 12.9;
        assert_abs_diff_eq!(
            m.h(&Vector3::new(0.7, 0.1, xi), &[xi, 2.2]),
            0.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn harvest_left_field_subtracts_harvesting() {
        let m = harvest_model();
        let x = Vector3::new(0.8, 0.12, 13.0);
        let p = [0.78, 2.2];
        let diff = m.f_right(&x, &p) - m.f_left(&x, &p);
        let expected = Vector3::new(0.09 * x[0], 0.01 * x[1], 0.001 * x[2]);
        assert!((diff - expected).norm() < 1e-14);
    }

    #[test]
    fn analytic_jacobian_matches_finite_differences() {
        for m in [toy_model(), pest_model(), harvest_model()] {
            let x = Vector3::new(0.7, 0.14, 12.5);
            let p = [0.6, 2.2];
            let ja = m.jac_right(&x, &p);
            // strip the registered Jacobian to force the FD path
            let fd = FilippovModel::new(
                "fd",
                ["a", "b"],
                Arc::new(move |_x: &Vector3<f64>, _p: &Params| Vector3::zeros()),
                {
                    let mm = m.clone();
                    Arc::new(move |x: &Vector3<f64>, p: &Params| mm.f_right(x, p))
                },
                Arc::new(|_x: &Vector3<f64>, _p: &Params| 1.0),
            )
            .jac_right(&x, &p);
            assert!((ja - fd).norm() < 1e-7, "model {}", m.name);
        }
    }

    #[test]
    fn unknown_model_and_parameter_errors() {
        assert_eq!(
            builtin_model("nope", &BTreeMap::new()).unwrap_err().kind(),
            "UnknownModel"
        );
        let mut o = BTreeMap::new();
        o.insert("zz".to_string(), 1.0);
        assert_eq!(
            builtin_model("pest", &o).unwrap_err().kind(),
            "UnknownParameter"
        );
    }
}
