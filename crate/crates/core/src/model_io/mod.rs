//! Model registry and configuration loading: built-in systems by name, or
//! user-defined vector fields given as expression strings.
//!
//! Config format (JSON):
//!
//! ```json
//! { "model": "toy", "params": { "nu": 0.2, "eta": 0.2 } }
//! { "model": { "f_left": ["0","-2","1"],
//!              "f_right": ["X2", "-X1 + eta*X2 - X2^3", "-X3/5"],
//!              "h": "nu - X1 - 2*X2 - 3*X3" },
//!   "bifurcation": ["nu", "eta"],
//!   "params": { "nu": 0.2, "eta": 0.2 } }
//! ```
//!
//! For built-ins, entries of `params` matching the model's bifurcation pair
//! set its initial values and the rest override fixed constants. For inline
//! models every named parameter must be bound in `params` or listed in
//! `bifurcation`.

pub mod builtins;
pub mod expr;

use crate::error::{Error, Result};
use crate::filippov::{FilippovModel, Params};
use expr::{bind, parse_expression, BoundExpr};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;

pub use builtins::{builtin_codim2_guess, builtin_model};
pub use expr::{parse_expression as parse_expr, ExprAst};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSpec {
    Name(String),
    Inline {
        f_left: [String; 3],
        f_right: [String; 3],
        h: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bifurcation: Option<[String; 2]>,
}

/// A validated configuration: the constructed model plus initial values of
/// the two bifurcation parameters.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub raw: RawConfig,
    pub model: FilippovModel,
    pub initial_params: [f64; 2],
}

impl ModelConfig {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.raw).expect("config serialization cannot fail")
    }
}

fn build_inline(
    f_left: &[String; 3],
    f_right: &[String; 3],
    h: &str,
    bifurcation: &[String; 2],
    fixed: &BTreeMap<String, f64>,
) -> Result<FilippovModel> {
    let vars = ["X1", "X2", "X3"];
    // parameter slots: the bifurcation pair first, then fixed constants
    let mut names: Vec<String> = vec![bifurcation[0].clone(), bifurcation[1].clone()];
    let mut values: Vec<f64> = vec![0.0, 0.0];
    for (k, v) in fixed {
        if k != &bifurcation[0] && k != &bifurcation[1] {
            names.push(k.clone());
            values.push(*v);
        }
    }

    let compile = |src: &str| -> Result<BoundExpr> {
        let ast = parse_expression(src)?;
        bind(&ast, &vars, &names)
    };
    let fl: Vec<BoundExpr> = f_left.iter().map(|s| compile(s)).collect::<Result<_>>()?;
    let fr: Vec<BoundExpr> = f_right.iter().map(|s| compile(s)).collect::<Result<_>>()?;
    let hh = compile(h)?;

    let eval_vec = move |exprs: &[BoundExpr], x: &Vector3<f64>, p: &Params, consts: &[f64]| {
        let mut vals = consts.to_vec();
        vals[0] = p[0];
        vals[1] = p[1];
        Vector3::new(
            exprs[0].eval(x, &vals).unwrap_or(f64::NAN),
            exprs[1].eval(x, &vals).unwrap_or(f64::NAN),
            exprs[2].eval(x, &vals).unwrap_or(f64::NAN),
        )
    };

    let vals_l = values.clone();
    let f_left_fn = Arc::new(move |x: &Vector3<f64>, p: &Params| eval_vec(&fl, x, p, &vals_l));
    let vals_r = values.clone();
    let f_right_fn = Arc::new(move |x: &Vector3<f64>, p: &Params| eval_vec(&fr, x, p, &vals_r));
    let vals_h = values.clone();
    let h_fn = Arc::new(move |x: &Vector3<f64>, p: &Params| {
        let mut vals = vals_h.clone();
        vals[0] = p[0];
        vals[1] = p[1];
        hh.eval(x, &vals).unwrap_or(f64::NAN)
    });

    Ok(FilippovModel::new(
        "inline",
        [bifurcation[0].as_str(), bifurcation[1].as_str()],
        f_left_fn,
        f_right_fn,
        h_fn,
    ))
}

/// Parse and validate a JSON model configuration.
pub fn load_config(text: &str) -> Result<ModelConfig> {
    let raw: RawConfig = serde_json::from_str(text)
        .map_err(|e| Error::SchemaError(format!("line {}: {}", e.line(), e)))?;
    let (model, initial) = match &raw.model {
        ModelSpec::Name(name) => {
            let bif_names = match name.as_str() {
                "toy" => ["nu", "eta"],
                _ => ["xi", "b1"],
            };
            let mut overrides = BTreeMap::new();
            let mut initial = [0.0, 0.0];
            for (k, v) in &raw.params {
                if k == bif_names[0] {
                    initial[0] = *v;
                } else if k == bif_names[1] {
                    initial[1] = *v;
                } else {
                    overrides.insert(k.clone(), *v);
                }
            }
            (builtin_model(name, &overrides)?, initial)
        }
        ModelSpec::Inline { f_left, f_right, h } => {
            let bif = raw.bifurcation.clone().ok_or_else(|| {
                Error::SchemaError(
                    "inline models must declare \"bifurcation\": [name, name]".into(),
                )
            })?;
            let mut initial = [0.0, 0.0];
            if let Some(v) = raw.params.get(&bif[0]) {
                initial[0] = *v;
            }
            if let Some(v) = raw.params.get(&bif[1]) {
                initial[1] = *v;
            }
            (build_inline(f_left, f_right, h, &bif, &raw.params)?, initial)
        }
    };
    Ok(ModelConfig {
        raw,
        model,
        initial_params: initial,
    })
}
