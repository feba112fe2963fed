//! Command-line front end for the Filippov boundary-Hopf analysis
//! pipeline: hybrid simulation, genericity reports, grazing-sliding
//! curves, normal-form parameter extraction, bifurcation-curve tracing,
//! attractor sweeps, and the reduced-map atlas.

mod output;
mod verify;

use anyhow::{anyhow, bail, Context, Result};
use atlas_core::bcnf::{
    bcnf_orbit_diagram, boundaries_to_csv, region_boundary_in, scan_plane, BoundaryKind,
    BoundaryRow, ClassifyOptions, FixedCoord, FullBcnf,
};
use atlas_core::boundary_hopf::genericity_report;
use atlas_core::continuation::{
    sweep_1d, sweep_to_csv, trace_beb_curve, trace_gs_curve, trace_hopf_curve, trace_pd_curve,
    GsCurveOptions, PdCurveOptions, SweepOptions,
};
use atlas_core::filippov::{integrate_hybrid_opts, IntegrateOptions, Section};
use atlas_core::grazing::{find_grazing_cycle, normal_form_params, GrazingSeed, SectionSpec};
use atlas_core::model_io::{builtin_codim2_guess, builtin_model, load_config};
use atlas_core::{FilippovModel, ToleranceConfig};
use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use output::{invocation_line, write_artifact};
use std::collections::BTreeMap;

#[derive(Parser)]
#[command(
    name = "nonsmooth-atlas",
    version,
    about = "Analysis pipeline for boundary Hopf bifurcations in 3-d Filippov systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ModelArgs {
    /// Built-in model: toy | pest | harvest (long names accepted)
    #[arg(long, conflicts_with = "config")]
    model: Option<String>,
    /// JSON model-configuration file
    #[arg(long)]
    config: Option<String>,
    /// First bifurcation parameter of the toy model
    #[arg(long)]
    nu: Option<f64>,
    /// Second bifurcation parameter of the toy model
    #[arg(long)]
    eta: Option<f64>,
    /// Threshold parameter of the food-chain models
    #[arg(long)]
    xi: Option<f64>,
    /// Functional-response parameter of the food-chain models
    #[arg(long)]
    b1: Option<f64>,
    /// First bifurcation parameter, by position
    #[arg(long)]
    p1: Option<f64>,
    /// Second bifurcation parameter, by position
    #[arg(long)]
    p2: Option<f64>,
}

impl ModelArgs {
    fn load(&self) -> Result<(FilippovModel, [f64; 2])> {
        let (model, mut params) = if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("cannot read {path}"))?;
            let cfg = load_config(&text)?;
            (cfg.model, cfg.initial_params)
        } else {
            let name = self.model.as_deref().unwrap_or("toy");
            (builtin_model(name, &BTreeMap::new())?, [0.0, 0.0])
        };
        for (name, value) in [
            ("nu", self.nu),
            ("eta", self.eta),
            ("xi", self.xi),
            ("b1", self.b1),
        ] {
            if let Some(v) = value {
                match model.param_names.iter().position(|p| p == name) {
                    Some(i) => params[i] = v,
                    None => bail!(
                        "parameter --{name} does not exist on model `{}` (has {} and {})",
                        model.name,
                        model.param_names[0],
                        model.param_names[1]
                    ),
                }
            }
        }
        if let Some(v) = self.p1 {
            params[0] = v;
        }
        if let Some(v) = self.p2 {
            params[1] = v;
        }
        Ok((model, params))
    }
}

#[derive(Args, Debug)]
struct TolArgs {
    #[arg(long, default_value_t = 1e-10)]
    abs_tol: f64,
    #[arg(long, default_value_t = 1e-10)]
    rel_tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
}

impl TolArgs {
    fn to_config(&self) -> Result<ToleranceConfig> {
        let tol = ToleranceConfig {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_iter: self.max_iter,
            ..ToleranceConfig::default()
        };
        tol.validate()?;
        Ok(tol)
    }

    fn header(&self) -> String {
        format!(
            "# tolerances: abs_tol={:e} rel_tol={:e} max_iter={}",
            self.abs_tol, self.rel_tol, self.max_iter
        )
    }
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the hybrid system, writing a trajectory CSV
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        /// Initial state "x1,x2,x3"
        #[arg(long, default_value = "0.05,0,0")]
        x0: String,
        #[arg(long, default_value_t = 100.0)]
        tmax: f64,
        /// Trajectory CSV path ("-" for stdout)
        #[arg(long, default_value = "-")]
        out: String,
        /// Event-log CSV path
        #[arg(long)]
        events_out: Option<String>,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Boundary-Hopf genericity report at the codimension-two point (JSON)
    BhbReport {
        #[command(flatten)]
        model: ModelArgs,
        /// Equilibrium guess "x1,x2,x3" (defaults per built-in)
        #[arg(long)]
        guess_eq: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Trace the grazing-sliding curve with normal-form parameters (CSV)
    GsCurve {
        #[command(flatten)]
        model: ModelArgs,
        /// Range of the first parameter, traced from `from` to `to`
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        /// Second-parameter guess at `from`
        #[arg(long)]
        eta_guess: f64,
        /// Equilibrium guess "x1,x2,x3" used to bootstrap the first cycle
        #[arg(long)]
        guess_eq: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Normal-form parameters at one grazing-sliding point (JSON)
    NfParams {
        #[command(flatten)]
        model: ModelArgs,
        /// Value of the first parameter on the grazing curve
        #[arg(long)]
        at: f64,
        #[arg(long)]
        eta_guess: f64,
        #[arg(long)]
        guess_eq: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Trace a bifurcation curve over the parameter plane (CSV)
    Trace {
        #[command(subcommand)]
        what: TraceWhat,
    },
    /// One-parameter attractor sweep: H-values at fold-section crossings
    Sweep {
        #[command(flatten)]
        model: ModelArgs,
        /// Fixed parameter, e.g. "nu=0.3"
        #[arg(long)]
        fixed: String,
        /// Swept parameter and range, e.g. "eta=0:0.1:0.005"
        #[arg(long)]
        sweep: String,
        #[arg(long, default_value_t = 1000.0)]
        transient: f64,
        #[arg(long, default_value_t = 300.0)]
        record: f64,
        #[arg(long, default_value = "0.05,0,0")]
        x0: String,
        #[arg(long, default_value = "-")]
        out: String,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Classify the reduced border-collision map over a parameter grid
    BcnfScan {
        /// tau_L range "lo:hi:step"
        #[arg(long = "tauL")]
        tau_l: String,
        /// tau_R range "lo:hi:step"
        #[arg(long = "tauR")]
        tau_r: String,
        #[arg(long, default_value_t = 10_000)]
        transient: usize,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Orbit diagram of the normal form along a parameter path
    BcnfOrbit {
        /// Read (tau_L, tau_R, delta_L, delta_R) per point from a
        /// grazing-sliding curve CSV produced by `gs-curve`
        #[arg(long, conflicts_with_all = ["tau_l", "tau_r"])]
        gs_csv: Option<String>,
        #[arg(long = "tauL")]
        tau_l: Option<String>,
        /// Fixed tau_R while tau_L runs over its range
        #[arg(long = "tauR")]
        tau_r: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        iterates: usize,
        #[arg(long, default_value_t = 100)]
        keep: usize,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Solve region-boundary curves of the reduced map (CSV)
    BcnfCurves {
        /// Curve name: period-two-existence | first-turquoise |
        /// first-olive | purple-K | curve-a .. curve-h
        #[arg(long)]
        kind: String,
        /// Which coordinate is fixed: tau_l or tau_r
        #[arg(long, default_value = "tau_l")]
        fixed: String,
        /// Range of the fixed coordinate "lo:hi:step"
        #[arg(long)]
        range: String,
        #[arg(long, default_value = "-")]
        out: String,
    },
    /// Run a verification suite and print one pass/fail line per check
    Verify {
        /// paper-numbers | oracles | scaling
        suite: String,
    },
}

#[derive(Subcommand)]
enum TraceWhat {
    /// Hopf curve: sweeps the first parameter, solving the second
    Hopf {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        guess_eq: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Boundary-equilibrium curve: sweeps the second parameter
    Beb {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        guess_eq: Option<String>,
        #[arg(long, default_value = "-")]
        out: String,
        #[command(flatten)]
        tol: TolArgs,
    },
    /// Period-doubling curve of the (possibly sliding) limit cycle
    Pd {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 4)]
        steps: usize,
        /// Cycle anchor guess "x1,x2,x3" on the fold section
        #[arg(long)]
        cycle_anchor: String,
        #[arg(long)]
        cycle_period: f64,
        #[arg(long, default_value = "-")]
        out: String,
        #[command(flatten)]
        tol: TolArgs,
    },
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        bail!("expected \"x1,x2,x3\", got `{s}`");
    }
    let mut v = Vector3::zeros();
    for (i, p) in parts.iter().enumerate() {
        v[i] = p.trim().parse().with_context(|| format!("bad number `{p}`"))?;
    }
    Ok(v)
}

/// Parse "lo:hi:step" into (lo, hi, number of steps).
fn parse_range(s: &str) -> Result<(f64, f64, usize)> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        bail!("expected \"lo:hi:step\", got `{s}`");
    }
    let lo: f64 = parts[0].parse().context("bad range start")?;
    let hi: f64 = parts[1].parse().context("bad range end")?;
    let step: f64 = parts[2].parse().context("bad range step")?;
    if step <= 0.0 || hi <= lo {
        bail!("range must have hi > lo and step > 0, got `{s}`");
    }
    let n = ((hi - lo) / step).round().max(1.0) as usize;
    Ok((lo, hi, n))
}

/// Parse "name=value".
fn parse_assignment(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| anyhow!("expected \"name=value\", got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

fn param_index(model: &FilippovModel, name: &str) -> Result<usize> {
    model
        .param_names
        .iter()
        .position(|p| p == name)
        .ok_or_else(|| {
            anyhow!(
                "model `{}` has parameters {} and {}, not `{name}`",
                model.name,
                model.param_names[0],
                model.param_names[1]
            )
        })
}

fn eq_guess_for(model: &FilippovModel, flag: &Option<String>) -> Result<Vector3<f64>> {
    if let Some(s) = flag {
        return parse_vec3(s);
    }
    Ok(builtin_codim2_guess(&model.name)
        .map(|(_, eq)| eq)
        .unwrap_or_else(Vector3::zeros))
}

fn run() -> Result<()> {
    if let Ok(threads) = std::env::var("NONSMOOTH_ATLAS_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    let cli = Cli::parse();
    let inv = invocation_line();
    match cli.command {
        Command::Simulate {
            model,
            x0,
            tmax,
            out,
            events_out,
            tol,
        } => {
            let (m, params) = model.load()?;
            let tolc = tol.to_config()?;
            let x0 = parse_vec3(&x0)?;
            let mut opts = IntegrateOptions::new(tmax);
            opts.rtol = tolc.rel_tol.max(1e-12);
            opts.atol = opts.rtol * 1e-2;
            let traj = integrate_hybrid_opts(&m, &x0, &params, &[], &opts)?;
            let headers = vec![
                inv.clone(),
                tol.header(),
                format!(
                    "# model={} {}={} {}={}",
                    m.name, m.param_names[0], params[0], m.param_names[1], params[1]
                ),
            ];
            write_artifact(&out, &headers, |mut w| traj.to_csv(&mut w))?;
            if let Some(ev) = events_out {
                write_artifact(&ev, &headers, |mut w| traj.events_to_csv(&mut w))?;
            }
        }
        Command::BhbReport {
            model,
            guess_eq,
            out,
            tol,
        } => {
            let (m, mut params) = model.load()?;
            let tolc = tol.to_config()?;
            if params == [0.0, 0.0] {
                if let Some((p, _)) = builtin_codim2_guess(&m.name) {
                    params = p;
                }
            }
            let eq = eq_guess_for(&m, &guess_eq)?;
            let report = genericity_report(&m, &params, &eq, &tolc)?;
            let headers = vec![];
            write_artifact(&out, &headers, |w| {
                let mut j = report.to_json();
                j["invocation"] = serde_json::Value::String(inv.clone());
                writeln!(w, "{}", serde_json::to_string_pretty(&j).unwrap())
            })?;
        }
        Command::GsCurve {
            model,
            from,
            to,
            steps,
            eta_guess,
            guess_eq,
            out,
            tol,
        } => {
            let (m, _) = model.load()?;
            let tolc = tol.to_config()?;
            let eq = eq_guess_for(&m, &guess_eq)?;
            let curve = trace_gs_curve(
                &m,
                &GsCurveOptions {
                    range: (from, to),
                    steps,
                    eta_guess,
                    seed: GrazingSeed::Equilibrium(eq),
                },
                &tolc,
            )?;
            write_artifact(&out, &[inv.clone(), tol.header()], |mut w| curve.to_csv(&mut w))?;
        }
        Command::NfParams {
            model,
            at,
            eta_guess,
            guess_eq,
            out,
            tol,
        } => {
            let (m, _) = model.load()?;
            let tolc = tol.to_config()?;
            let eq = eq_guess_for(&m, &guess_eq)?;
            let gc = find_grazing_cycle(&m, at, eta_guess, &GrazingSeed::Equilibrium(eq), &tolc)?;
            let nf = normal_form_params(&m, &gc, SectionSpec::OmegaChart, &tolc)?;
            write_artifact(&out, &[], |w| {
                let j = serde_json::json!({
                    "invocation": inv,
                    "model": m.name,
                    m.param_names[0].clone(): gc.nu,
                    m.param_names[1].clone(): gc.eta_gs,
                    "grazing_point": [gc.grazing_point[0], gc.grazing_point[1], gc.grazing_point[2]],
                    "period": gc.period,
                    "tau_L": nf.params.tau_l,
                    "delta_L": nf.params.delta_l,
                    "tau_R": nf.params.tau_r,
                    "delta_R": nf.params.delta_r,
                    "mu": nf.params.mu_side.mu(),
                });
                writeln!(w, "{}", serde_json::to_string_pretty(&j).unwrap())
            })?;
        }
        Command::Trace { what } => match what {
            TraceWhat::Hopf {
                model,
                from,
                to,
                steps,
                guess_eq,
                out,
                tol,
            } => {
                let (m, params) = model.load()?;
                let tolc = tol.to_config()?;
                let eq = eq_guess_for(&m, &guess_eq)?;
                let start = [from, params[1]];
                let curve = trace_hopf_curve(&m, &start, &eq, (from, to), steps, &tolc)?;
                write_artifact(&out, &[inv.clone(), tol.header()], |mut w| curve.to_csv(&mut w))?;
            }
            TraceWhat::Beb {
                model,
                from,
                to,
                steps,
                guess_eq,
                out,
                tol,
            } => {
                let (m, params) = model.load()?;
                let tolc = tol.to_config()?;
                let eq = eq_guess_for(&m, &guess_eq)?;
                let start = [params[0], from];
                let curve = trace_beb_curve(&m, &start, &eq, (from, to), steps, &tolc)?;
                write_artifact(&out, &[inv.clone(), tol.header()], |mut w| curve.to_csv(&mut w))?;
            }
            TraceWhat::Pd {
                model,
                from,
                to,
                steps,
                cycle_anchor,
                cycle_period,
                out,
                tol,
            } => {
                let (m, params) = model.load()?;
                let tolc = tol.to_config()?;
                let anchor = parse_vec3(&cycle_anchor)?;
                let curve = trace_pd_curve(
                    &m,
                    &PdCurveOptions {
                        range: (from, to),
                        steps,
                        p2_guess: params[1],
                        cycle_anchor: anchor,
                        cycle_period,
                    },
                    &tolc,
                )?;
                write_artifact(&out, &[inv.clone(), tol.header()], |mut w| curve.to_csv(&mut w))?;
            }
        },
        Command::Sweep {
            model,
            fixed,
            sweep,
            transient,
            record,
            x0,
            out,
            tol,
        } => {
            let (m, _) = model.load()?;
            let tolc = tol.to_config()?;
            let (fname, fval) = parse_assignment(&fixed)?;
            let fixed_idx = param_index(&m, &fname)?;
            let fval: f64 = fval.parse().context("bad fixed value")?;
            let (sname, srange) = parse_assignment(&sweep)?;
            let sweep_idx = param_index(&m, &sname)?;
            let (lo, hi, n) = parse_range(&srange)?;
            if fixed_idx == sweep_idx {
                bail!("fixed and swept parameter must differ");
            }
            let rows = sweep_1d(
                &m,
                (fixed_idx, fval),
                Section::omega(1),
                &SweepOptions {
                    sweep_index: sweep_idx,
                    from: lo,
                    to: hi,
                    steps: n,
                    transient,
                    record,
                    x0: parse_vec3(&x0)?,
                    rtol: tolc.rel_tol.max(1e-10),
                },
                &tolc,
            )?;
            write_artifact(&out, &[inv.clone(), tol.header()], |mut w| {
                sweep_to_csv(&rows, &mut w)
            })?;
        }
        Command::BcnfScan {
            tau_l,
            tau_r,
            transient,
            samples,
            out,
        } => {
            let rl = parse_range(&tau_l)?;
            let rr = parse_range(&tau_r)?;
            let grid = scan_plane(
                rl,
                rr,
                &ClassifyOptions {
                    transient,
                    samples,
                    ..ClassifyOptions::default()
                },
            );
            write_artifact(&out, &[inv.clone()], |mut w| grid.to_csv(&mut w))?;
        }
        Command::BcnfOrbit {
            gs_csv,
            tau_l,
            tau_r,
            iterates,
            keep,
            out,
        } => {
            let path: Vec<FullBcnf> = if let Some(file) = gs_csv {
                let text = std::fs::read_to_string(&file)
                    .with_context(|| format!("cannot read {file}"))?;
                parse_gs_csv(&text)?
            } else {
                let range = tau_l.ok_or_else(|| anyhow!("need --gs-csv or --tauL with --tauR"))?;
                let tr = tau_r.ok_or_else(|| anyhow!("--tauR is required with --tauL"))?;
                let (lo, hi, n) = parse_range(&range)?;
                (0..=n)
                    .map(|i| {
                        let tl = lo + (hi - lo) * i as f64 / n as f64;
                        FullBcnf {
                            tau_l: tl,
                            delta_l: 0.0,
                            tau_r: tr,
                            delta_r: tr - 1.0,
                            mu: -1.0,
                        }
                    })
                    .collect()
            };
            let rows = bcnf_orbit_diagram(&path, iterates, keep);
            write_artifact(&out, &[inv.clone()], |w| {
                writeln!(w, "path_index,x_value")?;
                for r in &rows {
                    if r.diverged {
                        writeln!(w, "{},diverged", r.index)?;
                    }
                    for x in &r.x_values {
                        writeln!(w, "{},{:.16e}", r.index, x)?;
                    }
                }
                Ok(())
            })?;
        }
        Command::BcnfCurves {
            kind,
            fixed,
            range,
            out,
        } => {
            let bkind = BoundaryKind::parse(&kind)
                .ok_or_else(|| anyhow!("unknown boundary curve `{kind}`"))?;
            let (lo, hi, n) = parse_range(&range)?;
            let tol = ToleranceConfig::default();
            let mut rows = Vec::new();
            for i in 0..=n {
                let c = lo + (hi - lo) * i as f64 / n as f64;
                let fc = match fixed.as_str() {
                    "tau_l" | "tauL" => FixedCoord::TauL(c),
                    "tau_r" | "tauR" => FixedCoord::TauR(c),
                    other => bail!("--fixed must be tau_l or tau_r, got `{other}`"),
                };
                let search = match fc {
                    FixedCoord::TauL(_) => (-0.99, 4.99),
                    FixedCoord::TauR(_) => (-4.49, 0.99),
                };
                match region_boundary_in(bkind, fc, search, &tol) {
                    Ok(solved) => rows.push(BoundaryRow {
                        kind: bkind,
                        fixed_coord: c,
                        solved_coord: solved,
                    }),
                    Err(atlas_core::Error::NoBracket { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }
            write_artifact(&out, &[inv.clone()], |mut w| boundaries_to_csv(&rows, &mut w))?;
        }
        Command::Verify { suite } => {
            verify::run_suite(&suite)?;
        }
    }
    Ok(())
}

/// Parse the gs-curve CSV back into normal-form parameter tuples.
fn parse_gs_csv(text: &str) -> Result<Vec<FullBcnf>> {
    let mut out = Vec::new();
    for line in text.lines() {
        if line.starts_with('#') || line.starts_with("param1") || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 9 {
            bail!("gs-curve CSV needs the normal-form columns (got {} fields)", cols.len());
        }
        out.push(FullBcnf {
            tau_l: cols[5].parse().context("bad tau_L")?,
            tau_r: cols[6].parse().context("bad tau_R")?,
            delta_r: cols[7].parse().context("bad delta_R")?,
            delta_l: cols[8].parse().context("bad delta_L")?,
            mu: -1.0,
        });
    }
    Ok(out)
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(e) => {
            let kind = e
                .downcast_ref::<atlas_core::Error>()
                .map(|de| de.kind())
                .unwrap_or("Internal");
            let payload = serde_json::json!({
                "error": kind,
                "message": format!("{e:#}"),
            });
            eprintln!("{payload}");
            std::process::exit(1);
        }
    }
}
