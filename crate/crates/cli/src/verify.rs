//! Verification suites: re-derive the headline quantities and compare
//! against their targets, printing one pass/fail line per check. Checks
//! never abort the run; failures become report entries.

use anyhow::{bail, Result};
use atlas_core::boundary_hopf::{genericity_report, theorem1_limits};
use atlas_core::grazing::{
    disc_map_linear, discontinuity_scaling_slope, dq_disc_chart, dq_disc_limit, dq_global_fd,
    dq_global_limit, find_grazing_cycle, GrazingSeed, OmegaChart,
};
use atlas_core::model_io::builtins::{harvest_model, pest_model, toy_model};
use atlas_core::{FilippovModel, ToleranceConfig};
use nalgebra::Vector3;
use std::sync::Arc;

struct Check {
    name: &'static str,
    measured: f64,
    target: f64,
    tol: f64,
}

impl Check {
    fn passed(&self) -> bool {
        (self.measured - self.target).abs() <= self.tol
    }
}

fn print_rows(rows: &[std::result::Result<Check, (String, String)>]) {
    let mut failures = 0;
    for row in rows {
        match row {
            Ok(c) => {
                let status = if c.passed() { "PASS" } else { "FAIL" };
                if !c.passed() {
                    failures += 1;
                }
                println!(
                    "{status}  {:<42} measured={:+.6e}  target={:+.6e}  |diff|={:.2e}  tol={:.1e}",
                    c.name,
                    c.measured,
                    c.target,
                    (c.measured - c.target).abs(),
                    c.tol
                );
            }
            Err((name, msg)) => {
                failures += 1;
                println!("FAIL  {name:<42} error: {msg}");
            }
        }
    }
    println!(
        "{} checks, {} failed",
        rows.len(),
        failures
    );
}

fn jordan_test_model() -> FilippovModel {
    use atlas_core::filippov::Params;
    let (a, b, c, beta0, gamma0, psi) = (-1.0, -2.0, -3.0, 1.0, -0.2, 1.0);
    let fr = Arc::new(move |x: &Vector3<f64>, _p: &Params| {
        Vector3::new(beta0 * x[1], -beta0 * x[0], gamma0 * x[2])
    });
    let fl = Arc::new(move |_x: &Vector3<f64>, _p: &Params| Vector3::new(0.0, -2.0, 1.0));
    let h = Arc::new(move |x: &Vector3<f64>, _p: &Params| a * x[0] + b * x[1] + c * x[2] + psi);
    let grad = Arc::new(move |_x: &Vector3<f64>, _p: &Params| Vector3::new(a, b, c));
    FilippovModel::new("jordan-blowup", ["nu", "eta"], fl, fr, h).with_grad_h(grad)
}

fn oracles() -> Vec<std::result::Result<Check, (String, String)>> {
    let mut rows = Vec::new();
    let run = || -> Result<Vec<Check>> {
        let mut out = Vec::new();
        let m = jordan_test_model();
        let p = [0.0, 0.0];
        let g = Vector3::new(0.2, 0.4, 0.0);
        let chart = OmegaChart::new(&m, &p, &g)?;
        let period = 2.0 * std::f64::consts::PI;
        let fd = dq_global_fd(&m, &p, &chart, period, 1e-5)?;
        let oracle = dq_global_limit(-1.0, -2.0, -3.0, 1.0, -0.2);
        out.push(Check {
            name: "DQ_global FD vs closed form (max entry)",
            measured: (fd - oracle).abs().max(),
            target: 0.0,
            tol: 1e-6,
        });
        let disc = disc_map_linear(&m, &p, &g)?;
        let dq = dq_disc_chart(&m, &p, &chart, &disc);
        let oracle_d = dq_disc_limit(-1.0, -2.0, -3.0, 0.0, -2.0, 1.0, 1.0, -0.2)?;
        out.push(Check {
            name: "DQ_disc chart vs closed form (max entry)",
            measured: (dq - oracle_d).abs().max(),
            target: 0.0,
            tol: 1e-8,
        });
        let prod = oracle * oracle_d;
        let lim = theorem1_limits(
            &Vector3::new(-1.0, -2.0, -3.0),
            &Vector3::new(0.0, -2.0, 1.0),
            &Vector3::z(),
            &Vector3::z(),
            1.0,
            -0.2,
        )?;
        out.push(Check {
            name: "trace(DQ_global DQ_disc) vs tau_L limit",
            measured: prod.trace(),
            target: lim.tau_l0,
            tol: 1e-10,
        });
        out.push(Check {
            name: "det(DQ_global DQ_disc)",
            measured: prod.determinant(),
            target: 0.0,
            tol: 1e-12,
        });
        Ok(out)
    };
    match run() {
        Ok(cs) => rows.extend(cs.into_iter().map(Ok)),
        Err(e) => rows.push(Err(("oracles".into(), format!("{e:#}")))),
    }
    rows
}

fn scaling() -> Vec<std::result::Result<Check, (String, String)>> {
    let run = || -> Result<Check> {
        let tol = ToleranceConfig::default();
        let m = toy_model();
        let gc = find_grazing_cycle(
            &m,
            0.5,
            0.15 * 0.25,
            &GrazingSeed::Equilibrium(Vector3::zeros()),
            &tol,
        )?;
        let eps: Vec<f64> = (0..7).map(|i| 10f64.powf(-2.0 - 0.5 * i as f64)).collect();
        let slope = discontinuity_scaling_slope(&m, &gc, &eps, 8, &tol)?;
        Ok(Check {
            name: "discontinuity-map remainder exponent",
            measured: slope,
            target: 1.5,
            tol: 0.1,
        })
    };
    vec![run().map_err(|e| ("scaling".to_string(), format!("{e:#}")))]
}

fn paper_numbers() -> Vec<std::result::Result<Check, (String, String)>> {
    let mut rows: Vec<std::result::Result<Check, (String, String)>> = Vec::new();
    let tol = ToleranceConfig::default();

    match genericity_report(&toy_model(), &[0.0, 0.0], &Vector3::zeros(), &tol) {
        Ok(r) => {
            rows.push(Ok(Check {
                name: "toy: tau_L limit",
                measured: r.limits.tau_l0,
                target: -1.8616,
                tol: 1e-4,
            }));
            rows.push(Ok(Check {
                name: "toy: tau_R limit",
                measured: r.limits.tau_r0,
                target: 1.2846,
                tol: 1e-4,
            }));
            rows.push(Ok(Check {
                name: "toy: delta_R limit",
                measured: r.limits.delta_r0,
                target: 0.2846,
                tol: 1e-4,
            }));
            rows.push(Ok(Check {
                name: "toy: u . d",
                measured: r.u_dot_d,
                target: 1.0,
                tol: 1e-12,
            }));
            rows.push(Ok(Check {
                name: "toy: u . M_R^-1 d",
                measured: r.u_minv_d,
                target: 13.0,
                tol: 1e-12,
            }));
        }
        Err(e) => rows.push(Err(("toy report".into(), e.to_string()))),
    }

    match genericity_report(
        &pest_model(),
        &[13.2, 2.114],
        &Vector3::new(0.76, 0.125, 13.2),
        &tol,
    ) {
        Ok(r) => {
            rows.push(Ok(Check {
                name: "pest: b1 at the Hopf point",
                measured: r.params[1],
                target: 2.1138,
                tol: 1e-3,
            }));
            rows.push(Ok(Check {
                name: "pest: equilibrium X3",
                measured: r.equilibrium[2],
                target: 13.23,
                tol: 0.02,
            }));
            rows.push(Ok(Check {
                name: "pest: tau_L limit",
                measured: r.limits.tau_l0,
                target: -0.02301,
                tol: 2e-3,
            }));
            rows.push(Ok(Check {
                name: "pest: tau_R limit",
                measured: r.limits.tau_r0,
                target: 1.0,
                tol: 1e-2,
            }));
        }
        Err(e) => rows.push(Err(("pest report".into(), e.to_string()))),
    }

    match genericity_report(
        &harvest_model(),
        &[0.76, 2.114],
        &Vector3::new(0.76, 0.125, 13.2),
        &tol,
    ) {
        Ok(r) => {
            rows.push(Ok(Check {
                name: "harvest: equilibrium X1",
                measured: r.equilibrium[0],
                target: 0.7603,
                tol: 1e-3,
            }));
            rows.push(Ok(Check {
                name: "harvest: tau_L limit",
                measured: r.limits.tau_l0,
                target: 1.541,
                tol: 1e-2,
            }));
        }
        Err(e) => rows.push(Err(("harvest report".into(), e.to_string()))),
    }
    rows
}

pub fn run_suite(suite: &str) -> Result<()> {
    let rows = match suite {
        "oracles" => oracles(),
        "scaling" => scaling(),
        "paper-numbers" => paper_numbers(),
        other => bail!("unknown suite `{other}` (expected paper-numbers | oracles | scaling)"),
    };
    print_rows(&rows);
    Ok(())
}
