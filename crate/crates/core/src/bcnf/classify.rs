//! Attractor classification of the reduced map over the parameter plane.
//!
//! Chaotic attractors are finite unions of line segments: every iterate
//! lies either on the x-axis (left-branch image) or on an affine image of
//! an attractor line under the right branch. Lines are therefore tracked
//! exactly through the dynamics, and the sampled points on each line are
//! split into segments at gaps; components follow from segment proximity.

use super::{bcnf_step, special_points, BcnfParams};
use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use std::io::{self, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum AttractorKind {
    FixedPoint,
    PeriodTwo,
    Chaotic,
    Divergent,
}

impl AttractorKind {
    pub fn code(&self) -> u8 {
        match self {
            AttractorKind::FixedPoint => 0,
            AttractorKind::PeriodTwo => 1,
            AttractorKind::Chaotic => 2,
            AttractorKind::Divergent => 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BcnfClassification {
    pub kind: AttractorKind,
    pub n_components: Option<usize>,
    pub n_segments: Option<usize>,
    /// bounding box [x_min, x_max, y_min, y_max] of the sampled attractor
    pub extent: Option<[f64; 4]>,
    /// set when the orbit sits too close to a region boundary to decide,
    /// or when auxiliary seeds disagree with the primary one
    pub undecided: bool,
}

#[derive(Debug, Clone)]
pub struct ClassifyOptions {
    pub transient: usize,
    pub samples: usize,
    pub divergence_bound: f64,
    pub period_tol: f64,
    /// gap threshold as a fraction of the attractor extent
    pub gap_tol_rel: f64,
    /// auxiliary seeds checked for kind-level agreement
    pub aux_seeds: Vec<Vector2<f64>>,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            transient: 10_000,
            samples: 10_000,
            divergence_bound: 1e6,
            period_tol: 1e-9,
            gap_tol_rel: 1e-4,
            aux_seeds: vec![
                Vector2::new(0.1, 0.0),
                Vector2::new(-0.1, 0.0),
                Vector2::new(-1.0, 0.0),
            ],
        }
    }
}

/// A line in normal form `n . z = c` with a unit normal of canonical sign.
#[derive(Debug, Clone, Copy)]
struct Line {
    normal: Vector2<f64>,
    offset: f64,
    /// an anchor point and unit direction for projections
    anchor: Vector2<f64>,
    dir: Vector2<f64>,
}

impl Line {
    fn from_point_dir(point: Vector2<f64>, dir: Vector2<f64>) -> Line {
        let d = dir.normalize();
        let mut n = Vector2::new(-d[1], d[0]);
        if n[1] < 0.0 || (n[1] == 0.0 && n[0] < 0.0) {
            n = -n;
        }
        let dir = Vector2::new(n[1], -n[0]);
        Line {
            normal: n,
            offset: n.dot(&point),
            anchor: point,
            dir,
        }
    }

    fn close_to(&self, other: &Line, tol: f64) -> bool {
        (self.normal - other.normal).norm() < 1e-9
            && (self.offset - other.offset).abs() < tol
    }
}

fn right_matrix(p: &BcnfParams) -> Matrix2<f64> {
    Matrix2::new(p.tau_r, 1.0, 1.0 - p.tau_r, 0.0)
}

enum Outcome {
    Diverged,
    Fixed { dist: f64 },
    PeriodTwo { dist: f64 },
    Chaotic,
}

/// Iterate from a seed and decide the coarse outcome, returning the final
/// state for further sampling.
fn probe(p: &BcnfParams, seed: Vector2<f64>, opts: &ClassifyOptions) -> (Outcome, Vector2<f64>) {
    let mut z = seed;
    for _ in 0..opts.transient {
        z = bcnf_step(p, &z);
        if !z[0].is_finite() || z.norm() > opts.divergence_bound {
            return (Outcome::Diverged, z);
        }
    }
    let z1 = bcnf_step(p, &z);
    let z2 = bcnf_step(p, &z1);
    let d1 = (z1 - z).norm();
    let d2 = (z2 - z).norm();
    if d1 <= opts.period_tol {
        (Outcome::Fixed { dist: d1 }, z)
    } else if d2 <= opts.period_tol {
        (Outcome::PeriodTwo { dist: d2 }, z)
    } else if d2 <= opts.period_tol.sqrt() && d1 > opts.period_tol {
        // contracting but not yet converged: near a boundary
        (Outcome::PeriodTwo { dist: d2 }, z)
    } else if d1 <= opts.period_tol.sqrt() {
        (Outcome::Fixed { dist: d1 }, z)
    } else {
        (Outcome::Chaotic, z)
    }
}

fn segment_distance(
    a0: Vector2<f64>,
    a1: Vector2<f64>,
    b0: Vector2<f64>,
    b1: Vector2<f64>,
) -> f64 {
    // min distance between two 2-d segments
    fn point_seg(p: Vector2<f64>, s0: Vector2<f64>, s1: Vector2<f64>) -> f64 {
        let d = s1 - s0;
        let l2 = d.norm_squared();
        if l2 == 0.0 {
            return (p - s0).norm();
        }
        let t = ((p - s0).dot(&d) / l2).clamp(0.0, 1.0);
        (p - (s0 + d * t)).norm()
    }
    fn orient(a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> f64 {
        (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    }
    // proper intersection means distance zero
    let (d1, d2) = (orient(a0, a1, b0), orient(a0, a1, b1));
    let (d3, d4) = (orient(b0, b1, a0), orient(b0, b1, a1));
    if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
        return 0.0;
    }
    point_seg(b0, a0, a1)
        .min(point_seg(b1, a0, a1))
        .min(point_seg(a0, b0, b1))
        .min(point_seg(a1, b0, b1))
}

struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Self {
        Dsu((0..n).collect())
    }
    fn find(&mut self, i: usize) -> usize {
        if self.0[i] != i {
            let r = self.find(self.0[i]);
            self.0[i] = r;
            r
        } else {
            i
        }
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra] = rb;
        }
    }
}

/// Classify the attractor at one parameter point by iteration from the
/// origin (plus auxiliary seeds for coexistence checks) and, in the
/// chaotic case, reconstruct its segments by exact line tracking.
pub fn classify_attractor(p: &BcnfParams, opts: &ClassifyOptions) -> BcnfClassification {
    let (outcome, z_end) = probe(p, Vector2::new(0.0, 0.0), opts);
    let sp = special_points(p).ok();

    let mut undecided = false;
    let kind = match outcome {
        Outcome::Diverged => AttractorKind::Divergent,
        Outcome::Fixed { dist } => {
            // cross-check the analytic stability range and location
            let in_range = p.tau_l.abs() < 1.0;
            let near = sp
                .as_ref()
                .map(|s| (z_end - s.p_star).norm() < 1e-4)
                .unwrap_or(true);
            if !in_range || !near || dist > opts.period_tol {
                undecided = true;
            }
            AttractorKind::FixedPoint
        }
        Outcome::PeriodTwo { dist } => {
            let in_range = p.tau_l < -1.0
                && p.tau_r > 0.0
                && p.tau_r < 2.0 / (1.0 - p.tau_l);
            let near = sp
                .as_ref()
                .map(|s| {
                    (z_end - s.w_left).norm().min((z_end - s.w_right).norm()) < 1e-4
                })
                .unwrap_or(true);
            if !in_range || !near || dist > opts.period_tol {
                undecided = true;
            }
            AttractorKind::PeriodTwo
        }
        Outcome::Chaotic => AttractorKind::Chaotic,
    };

    // coexistence probe: auxiliary seeds must reproduce the kind
    for seed in &opts.aux_seeds {
        let (aux, _) = probe(p, *seed, &ClassifyOptions {
            transient: opts.transient / 2,
            aux_seeds: vec![],
            ..opts.clone()
        });
        let aux_kind = match aux {
            Outcome::Diverged => AttractorKind::Divergent,
            Outcome::Fixed { .. } => AttractorKind::FixedPoint,
            Outcome::PeriodTwo { .. } => AttractorKind::PeriodTwo,
            Outcome::Chaotic => AttractorKind::Chaotic,
        };
        if aux_kind != kind {
            undecided = true;
        }
    }

    if kind != AttractorKind::Chaotic {
        let extent = match kind {
            AttractorKind::FixedPoint => sp.map(|s| [s.p_star[0], s.p_star[0], 0.0, 0.0]),
            AttractorKind::PeriodTwo => sp.map(|s| {
                [
                    s.w_left[0].min(s.w_right[0]),
                    s.w_left[0].max(s.w_right[0]),
                    s.w_left[1].min(0.0),
                    s.w_left[1].max(0.0),
                ]
            }),
            _ => None,
        };
        return BcnfClassification {
            kind,
            n_components: None,
            n_segments: None,
            extent,
            undecided,
        };
    }

    // --- chaotic: sample with exact line tracking ---
    let a_r = right_matrix(p);
    let mut lines: Vec<Line> = vec![Line::from_point_dir(
        Vector2::new(0.0, 0.0),
        Vector2::new(1.0, 0.0),
    )];
    let mut cur_line = 0usize;
    let mut z = z_end;
    // samples as (line id, projection along the line direction)
    let mut on_line: Vec<Vec<f64>> = vec![vec![]];
    let mut bbox = [f64::MAX, f64::MIN, f64::MAX, f64::MIN];
    let mut diverged = false;
    for _ in 0..opts.samples {
        let prev_line = cur_line;
        let left = z[0] <= 0.0;
        z = bcnf_step(p, &z);
        if !z[0].is_finite() || z.norm() > opts.divergence_bound {
            diverged = true;
            break;
        }
        cur_line = if left {
            0
        } else {
            let src = lines[prev_line];
            let img = Line::from_point_dir(
                Vector2::new(
                    p.tau_r * src.anchor[0] + src.anchor[1] - 1.0,
                    (1.0 - p.tau_r) * src.anchor[0],
                ),
                a_r * src.dir,
            );
            match lines
                .iter()
                .position(|l| l.close_to(&img, 1e-8 * (1.0 + l.offset.abs())))
            {
                Some(i) => i,
                None => {
                    lines.push(img);
                    on_line.push(vec![]);
                    lines.len() - 1
                }
            }
        };
        let line = &lines[cur_line];
        on_line[cur_line].push(line.dir.dot(&(z - line.anchor)));
        bbox[0] = bbox[0].min(z[0]);
        bbox[1] = bbox[1].max(z[0]);
        bbox[2] = bbox[2].min(z[1]);
        bbox[3] = bbox[3].max(z[1]);
    }
    if diverged {
        return BcnfClassification {
            kind: AttractorKind::Divergent,
            n_components: None,
            n_segments: None,
            extent: None,
            undecided: true,
        };
    }

    let extent_scale = ((bbox[1] - bbox[0]).powi(2) + (bbox[3] - bbox[2]).powi(2))
        .sqrt()
        .max(1e-12);

    // split each line's samples into maximal segments at gaps; the gap
    // threshold adapts to the line's sampling density so that finite
    // sampling of a continuous segment is not reported as fragments (the
    // largest spacing among N uniform draws grows like (span/N) ln N)
    let mut segments: Vec<(Vector2<f64>, Vector2<f64>, usize)> = vec![];
    let mut gap_tol_global = opts.gap_tol_rel * extent_scale;
    for projs in on_line.iter_mut() {
        if projs.len() < 2 {
            continue;
        }
        projs.sort_by(f64::total_cmp);
        let span = projs.last().unwrap() - projs.first().unwrap();
        let dens = 3.0 * span / projs.len() as f64 * (projs.len() as f64).ln().max(1.0);
        gap_tol_global = gap_tol_global.max(dens);
    }
    let gap_tol = gap_tol_global;
    for (li, projs) in on_line.iter().enumerate() {
        if projs.is_empty() {
            continue;
        }
        let line = &lines[li];
        let mut start = projs[0];
        let mut prev = projs[0];
        let mut count = 1usize;
        for &t in projs.iter().skip(1) {
            if t - prev > gap_tol {
                segments.push((
                    line.anchor + line.dir * start,
                    line.anchor + line.dir * prev,
                    count,
                ));
                start = t;
                count = 0;
            }
            prev = t;
            count += 1;
        }
        segments.push((
            line.anchor + line.dir * start,
            line.anchor + line.dir * prev,
            count,
        ));
    }

    // thin sampling makes the reconstruction unreliable
    if segments.iter().any(|s| s.2 < 5) {
        undecided = true;
    }

    // connected components of the union of segments
    let mut dsu = Dsu::new(segments.len());
    for i in 0..segments.len() {
        for j in (i + 1)..segments.len() {
            if segment_distance(segments[i].0, segments[i].1, segments[j].0, segments[j].1)
                <= gap_tol
            {
                dsu.union(i, j);
            }
        }
    }
    let mut roots: Vec<usize> = (0..segments.len()).map(|i| dsu.find(i)).collect();
    roots.sort_unstable();
    roots.dedup();

    BcnfClassification {
        kind: AttractorKind::Chaotic,
        n_components: Some(roots.len()),
        n_segments: Some(segments.len()),
        extent: Some(bbox),
        undecided,
    }
}

/// Classification grid over a rectangle of the parameter plane.
#[derive(Debug, Clone)]
pub struct ScanGrid {
    pub tau_l: Vec<f64>,
    pub tau_r: Vec<f64>,
    /// row-major: index = i_tau_l * tau_r.len() + i_tau_r
    pub cells: Vec<BcnfClassification>,
}

impl ScanGrid {
    pub fn cell(&self, i_tau_l: usize, i_tau_r: usize) -> &BcnfClassification {
        &self.cells[i_tau_l * self.tau_r.len() + i_tau_r]
    }

    /// CSV export: tau_L, tau_R, kind_code, n_components, n_segments
    /// (kind_code 4 marks undecided cells).
    pub fn to_csv<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "tau_L,tau_R,kind_code,n_components,n_segments")?;
        for (i, tl) in self.tau_l.iter().enumerate() {
            for (j, tr) in self.tau_r.iter().enumerate() {
                let c = self.cell(i, j);
                let code = if c.undecided { 4 } else { c.kind.code() };
                writeln!(
                    w,
                    "{:.16e},{:.16e},{},{},{}",
                    tl,
                    tr,
                    code,
                    c.n_components.map(|v| v.to_string()).unwrap_or_default(),
                    c.n_segments.map(|v| v.to_string()).unwrap_or_default(),
                )?;
            }
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    let n = steps.max(1);
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Classify every cell of a parameter grid (cells run in parallel).
pub fn scan_plane(
    tau_l_range: (f64, f64, usize),
    tau_r_range: (f64, f64, usize),
    opts: &ClassifyOptions,
) -> ScanGrid {
    let tau_l = linspace(tau_l_range.0, tau_l_range.1, tau_l_range.2);
    let tau_r = linspace(tau_r_range.0, tau_r_range.1, tau_r_range.2);
    let pairs: Vec<(usize, usize)> = (0..tau_l.len())
        .flat_map(|i| (0..tau_r.len()).map(move |j| (i, j)))
        .collect();
    let cells: Vec<BcnfClassification> = pairs
        .par_iter()
        .map(|&(i, j)| classify_attractor(&BcnfParams::new(tau_l[i], tau_r[j]), opts))
        .collect();
    ScanGrid { tau_l, tau_r, cells }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bcnf::boundaries::{region_boundary, BoundaryKind, FixedCoord};
    use crate::numerics::ToleranceConfig;

    fn opts() -> ClassifyOptions {
        ClassifyOptions::default()
    }

    #[test]
    fn fixed_point_region() {
        let c = classify_attractor(&BcnfParams::new(0.0, 5.0), &opts());
        assert_eq!(c.kind, AttractorKind::FixedPoint);
        assert!(!c.undecided);
        // attractor sits at (-1, 0)
        let e = c.extent.unwrap();
        assert!((e[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn period_two_region() {
        // tau_R = 0.5 < 2/(1 - (-2)) = 2/3
        let c = classify_attractor(&BcnfParams::new(-2.0, 0.5), &opts());
        assert_eq!(c.kind, AttractorKind::PeriodTwo);
        assert!(!c.undecided);
    }

    #[test]
    fn divergent_region() {
        let c = classify_attractor(&BcnfParams::new(2.0, 3.0), &opts());
        assert_eq!(c.kind, AttractorKind::Divergent);
    }

    #[test]
    fn two_segment_one_component_attractor() {
        // left of the first splitting curve the attractor is a union of
        // two line segments joined at one endpoint
        let c = classify_attractor(&BcnfParams::new(-1.3, 2.0), &opts());
        assert_eq!(c.kind, AttractorKind::Chaotic);
        assert_eq!(c.n_components, Some(1));
        assert_eq!(c.n_segments, Some(2));
    }

    #[test]
    fn component_count_doubles_across_first_turquoise() {
        // crossing the curve g_L(U3) = P* in the tau_L direction splits
        // the attractor into twice as many connected components
        let tol = ToleranceConfig::default();
        let heavy = ClassifyOptions {
            transient: 20_000,
            samples: 60_000,
            ..opts()
        };
        let tau_r = 2.0;
        let boundary = region_boundary(
            BoundaryKind::FirstTurquoise,
            FixedCoord::TauR(tau_r),
            &tol,
        )
        .unwrap();
        let before = classify_attractor(&BcnfParams::new(boundary - 0.03, tau_r), &heavy);
        let after = classify_attractor(&BcnfParams::new(boundary + 0.03, tau_r), &heavy);
        assert_eq!(before.kind, AttractorKind::Chaotic);
        assert_eq!(after.kind, AttractorKind::Chaotic);
        assert_eq!(after.n_components.unwrap(), 2 * before.n_components.unwrap());
    }

    #[test]
    fn y_sign_rule_follows_tau_r() {
        for (tau_l, tau_r) in [(-1.5, 1.3), (-2.5, 1.1), (-1.5, 0.9), (-3.0, 0.8)] {
            let p = BcnfParams::new(tau_l, tau_r);
            let mut z = nalgebra::Vector2::new(0.0, 0.0);
            for _ in 0..5000 {
                z = bcnf_step(&p, &z);
            }
            for _ in 0..5000 {
                z = bcnf_step(&p, &z);
                if tau_r > 1.0 {
                    assert!(z[1] <= 1e-9, "y = {} at ({tau_l}, {tau_r})", z[1]);
                } else {
                    assert!(z[1] >= -1e-9, "y = {} at ({tau_l}, {tau_r})", z[1]);
                }
            }
        }
    }

    #[test]
    fn scan_plane_coarse_layout() {
        let grid = scan_plane(
            (-3.0, 0.5, 7),
            (-0.5, 3.0, 7),
            &ClassifyOptions {
                transient: 3000,
                samples: 3000,
                ..opts()
            },
        );
        // fixed-point band -1 < tau_L < 1
        let c = grid.cell(6, 5); // tau_L = 0, tau_R = 2
        assert_eq!(c.kind, AttractorKind::FixedPoint);
        // period-two wedge
        let c = grid.cell(0, 2); // tau_L = -3, tau_R = 0.5 = 2/(1-(-3))
        assert!(matches!(
            c.kind,
            AttractorKind::PeriodTwo | AttractorKind::Chaotic
        ));
        let mut csv = Vec::new();
        grid.to_csv(&mut csv).unwrap();
        let s = String::from_utf8(csv).unwrap();
        assert_eq!(s.lines().count(), 1 + 8 * 8);
    }
}
