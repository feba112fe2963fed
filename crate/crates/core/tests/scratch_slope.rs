use atlas_core::continuation::*;
use atlas_core::filippov::Section;
use atlas_core::grazing::{find_grazing_cycle, GrazingSeed};
use atlas_core::ToleranceConfig;
use nalgebra::Vector3;

fn extent(row: &SweepRow) -> f64 {
    if row.observable.is_empty() { return f64::NAN; }
    let mx = row.observable.iter().cloned().fold(f64::MIN, f64::max);
    let mn = row.observable.iter().cloned().fold(f64::MAX, f64::min);
    mx - mn
}

#[test]
fn sweeps_probe() {
    let tol = ToleranceConfig::default();

    // --- toy, nu = 0.3 ---
    let m = atlas_core::model_io::builtins::toy_model();
    let gc = find_grazing_cycle(&m, 0.3, 0.0135, &GrazingSeed::Equilibrium(Vector3::zeros()), &tol).unwrap();
    let eta_gs = gc.eta_gs;
    println!("toy eta_gs(0.3) = {eta_gs:.8}");
    let t0 = std::time::Instant::now();
    let rows = sweep_1d(&m, (0, 0.3), Section::omega(1), &SweepOptions {
        sweep_index: 1, from: eta_gs - 0.004, to: eta_gs + 0.02, steps: 6,
        transient: 800.0, record: 400.0, x0: Vector3::new(0.05, 0.0, 0.0), rtol: 1e-9,
    }, &tol).unwrap();
    for r in &rows {
        println!("eta={:.6} (d eta={:+.5}) n={} extent={:.5} sliding={} max={:.4}", r.value, r.value-eta_gs, r.observable.len(), extent(r), r.has_sliding,
            r.observable.iter().cloned().fold(f64::MIN, f64::max));
    }
    println!("toy sweep took {:?}", t0.elapsed());

    // --- pest, xi = 12.9 ---
    let m = atlas_core::model_io::builtins::pest_model();
    let gc = find_grazing_cycle(&m, 12.9, 2.15, &GrazingSeed::Equilibrium(Vector3::new(0.76,0.125,13.2)), &tol).unwrap();
    println!("pest b_gs(12.9) = {:.6}", gc.eta_gs);
    let b_gs = gc.eta_gs;
    let t0 = std::time::Instant::now();
    let rows = sweep_1d(&m, (0, 12.9), Section::omega(1), &SweepOptions {
        sweep_index: 1, from: b_gs - 0.02, to: b_gs + 0.02, steps: 4,
        transient: 3000.0, record: 400.0, x0: Vector3::new(0.76, 0.125, 13.0), rtol: 1e-9,
    }, &tol).unwrap();
    for r in &rows {
        println!("b1={:.5} (d={:+.4}) n={} extent={:.6} sliding={}", r.value, r.value-b_gs, r.observable.len(), extent(r), r.has_sliding);
    }
    println!("pest sweep took {:?}", t0.elapsed());

    // --- harvest, xi = 0.78 ---
    let m = atlas_core::model_io::builtins::harvest_model();
    let gc = find_grazing_cycle(&m, 0.78, 2.12, &GrazingSeed::Equilibrium(Vector3::new(0.76,0.125,13.2)), &tol).unwrap();
    println!("harvest b_gs(0.78) = {:.6}", gc.eta_gs);
    let b_gs = gc.eta_gs;
    let t0 = std::time::Instant::now();
    let rows = sweep_1d(&m, (0, 0.78), Section::omega(1), &SweepOptions {
        sweep_index: 1, from: b_gs - 0.004, to: b_gs + 0.004, steps: 4,
        transient: 3000.0, record: 600.0, x0: Vector3::new(0.76, 0.125, 13.0), rtol: 1e-9,
    }, &tol).unwrap();
    for r in &rows {
        println!("b1={:.5} (d={:+.4}) n={} extent={:.6} sliding={}", r.value, r.value-b_gs, r.observable.len(), extent(r), r.has_sliding);
    }
    println!("harvest sweep took {:?}", t0.elapsed());
}
