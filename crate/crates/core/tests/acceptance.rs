//! Acceptance gate: one test per criterion, each printing a single
//! `criterion N ...: PASS/FAIL` line. The sampler runs are shared between
//! criteria and computed once.
//!
//! Run with `cargo test -p santalo-core --test acceptance -- --nocapture` to
//! see the lines.

use std::f64::consts::PI;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use santalo::baseline::{covered_cells, monte_carlo_diagram, BaselineConfig};
use santalo::checks::{functionals_2d, functionals_3d, gradients_2d, pde_2d, CheckLine};
use santalo::diagram::{Bound, Curve, DiagramId, Relation};
use santalo::fit::{fit_to_target, named_target, FitConfig};
use santalo::gauge::{Gauge, GaugeNetwork, LinearGauge};
use santalo::geometry::{is_convex_polygon, CONVEXITY_TOL};
use santalo::io;
use santalo::quadrature::{sphere_directions, QuadratureConfig};
use santalo::sampler::{run_sampler, DiagramResult, SamplerConfig};
use santalo::Evaluator;

const TOL: f64 = 0.02;

struct Run {
    result: DiagramResult,
    elapsed: Duration,
}

/// Desk-scale configuration: coarser lattices than the library defaults
/// and a bounded iteration count, chosen to fit the per-diagram budgets on
/// one core.
fn config(diagram: DiagramId, volume_h: f64, max_iters: usize) -> SamplerConfig {
    let mut c = SamplerConfig::default_for(diagram.dim());
    c.discretization.quadrature = QuadratureConfig {
        volume_h,
        boundary_m: if diagram.dim() == 2 { 256 } else { 2048 },
    };
    c.lbfgs.max_iters = max_iters;
    c
}

fn sample(diagram: DiagramId, n: usize, seed: u64, cfg: SamplerConfig) -> Run {
    let t = Instant::now();
    let result = run_sampler(diagram, n, seed, cfg).unwrap_or_else(|e| panic!("{diagram}: {e}"));
    Run {
        result,
        elapsed: t.elapsed(),
    }
}

fn vpw2() -> &'static Run {
    static R: OnceLock<Run> = OnceLock::new();
    R.get_or_init(|| sample(DiagramId::VPW2, 64, 7, config(DiagramId::VPW2, 0.03, 300)))
}

fn vpw2_sym() -> &'static Run {
    static R: OnceLock<Run> = OnceLock::new();
    R.get_or_init(|| sample(DiagramId::VPW2_SYM, 32, 7, config(DiagramId::VPW2_SYM, 0.03, 200)))
}

fn vpt2() -> &'static Run {
    static R: OnceLock<Run> = OnceLock::new();
    R.get_or_init(|| sample(DiagramId::VPT2, 32, 7, config(DiagramId::VPT2, 0.02, 200)))
}

fn vmu2() -> &'static Run {
    static R: OnceLock<Run> = OnceLock::new();
    R.get_or_init(|| sample(DiagramId::VMU2, 16, 7, config(DiagramId::VMU2, 0.04, 80)))
}

fn report(criterion: u32, name: &str, pass: bool, detail: impl AsRef<str>) -> bool {
    println!(
        "criterion {criterion:>2} {name}: {} ({})",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    pass
}

fn lines_pass(lines: &[CheckLine]) -> bool {
    for l in lines {
        println!("    {l}");
    }
    lines.iter().all(|l| l.pass)
}

fn worst_excess(run: &DiagramResult, bound: &Bound) -> f64 {
    // largest signed violation in diagram units; ≤ 0 means satisfied
    run.points
        .iter()
        .map(|p| match (bound.curve, bound.relation) {
            (Curve::Linear(a), Relation::Below) => p.y - a * p.x,
            (Curve::Linear(a), Relation::Above) => a * p.x - p.y,
            (Curve::Quadratic(a), Relation::Below) => p.y - a * p.x * p.x,
            (Curve::Quadratic(a), Relation::Above) => a * p.x * p.x - p.y,
            (Curve::Horizontal(c), _) => p.y - c,
            (Curve::Vertical(c), _) => p.x - c,
            (Curve::Szego, _) if p.x > 0.5 + TOL => p.y - p.x / (4.0 * p.x - 2.0),
            (Curve::Szego, _) => f64::NEG_INFINITY,
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

fn bounds_line(criterion: u32, run: &Run, budget_min: u64) -> bool {
    let r = &run.result;
    let mut ok = true;
    let mut parts = Vec::new();
    for b in r.diagram.bounds() {
        let e = worst_excess(r, &b);
        let holds = r.points.iter().all(|p| b.holds(p.x, p.y, TOL));
        ok &= holds;
        parts.push(format!("{} max excess {e:+.4}", b.name));
    }
    let in_time = run.elapsed <= Duration::from_secs(60 * budget_min);
    report(
        criterion,
        &format!("{} N={} bounds within {TOL}", r.diagram, r.points.len()),
        ok,
        parts.join("; "),
    ) & report(
        criterion,
        &format!("{} runtime ≤ {budget_min} min", r.diagram),
        in_time,
        format!("{:.0?}, {} iterations, {:?}", run.elapsed, r.log.len(), r.termination),
    )
}

fn nearest_neighbor_stats(r: &DiagramResult) -> (f64, f64) {
    let n = r.points.len();
    let mut nn = vec![f64::INFINITY; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let d = (r.points[i].x - r.points[j].x).hypot(r.points[i].y - r.points[j].y);
                nn[i] = nn[i].min(d);
            }
        }
    }
    let min = nn.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = nn.iter().sum::<f64>() / n as f64;
    let sd = (nn.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    (min, sd / mean)
}

fn convex_2d<G: Gauge>(g: &G) -> bool {
    let b = g.boundary_points(&sphere_directions(2, 1024));
    let poly: Vec<[f64; 2]> = b.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    is_convex_polygon(&poly, CONVEXITY_TOL)
}

#[test]
fn criterion_01_analytic_functionals() {
    let t = Instant::now();
    let mut lines = functionals_2d().unwrap();
    lines.extend(pde_2d().unwrap());
    let ok = lines_pass(&lines);
    let elapsed = t.elapsed();
    let pass = report(1, "disk functionals", ok, format!("{} checks", lines.len()))
        & report(1, "runtime < 1 min", elapsed < Duration::from_secs(60), format!("{elapsed:.1?}"));
    assert!(pass);
}

#[test]
fn criterion_02_gradients() {
    let t = Instant::now();
    let lines = gradients_2d(20, 100).unwrap();
    let ok = lines_pass(&lines);
    let elapsed = t.elapsed();
    let pass = report(2, "gradients of 20 random nets vs central differences", ok, "Vol/Per/W 1e-5, E/T/mu1 1e-3")
        & report(2, "runtime < 5 min", elapsed < Duration::from_secs(300), format!("{elapsed:.1?}"));
    assert!(pass);
}

#[test]
fn criterion_03_convexity_and_density() {
    let t = Instant::now();
    let target = named_target("square").unwrap();
    let net = GaugeNetwork::init_random(2, 32, 0, 1.0).unwrap();
    let fit = fit_to_target(net, &target, &FitConfig::default()).unwrap();
    let fit_time = t.elapsed();
    let mut bodies = 0;
    let mut convex = convex_2d(&fit.net) as usize;
    bodies += 1;
    for run in [vpw2(), vpw2_sym(), vpt2(), vmu2()] {
        for g in &run.result.particles {
            bodies += 1;
            convex += convex_2d(g) as usize;
        }
    }
    let pass = report(3, "optimized and sampled bodies convex (1024 directions)", convex == bodies, format!("{convex}/{bodies}"))
        & report(3, "square fit N=32 Hausdorff ≤ 0.02", fit.hausdorff <= 0.02, format!("{:.3e}", fit.hausdorff))
        & report(3, "fit runtime < 2 min", fit_time < Duration::from_secs(120), format!("{fit_time:.1?}"));
    assert!(pass);
}

#[test]
fn criterion_04_vpw2() {
    let run = vpw2();
    let r = &run.result;
    let polya = r.diagram.bounds().into_iter().find(|b| b.name.starts_with("Pólya")).unwrap();
    let lower = r.diagram.bounds().into_iter().find(|b| b.name.starts_with("conjecture")).unwrap();
    let n = r.points.len();
    let (dmin, cv) = nearest_neighbor_stats(r);
    let need = 0.3 / (n as f64).sqrt();
    let pass = bounds_line(4, run, 30)
        & report(
            4,
            "y < (π²/6)x + 0.02",
            r.points.iter().all(|p| polya.holds(p.x, p.y, TOL)),
            format!("max excess {:+.4}", worst_excess(r, &polya)),
        )
        & report(
            4,
            "y ≥ (2π²/27)x − 0.02",
            r.points.iter().all(|p| lower.holds(p.x, p.y, TOL)),
            format!("max excess {:+.4}", worst_excess(r, &lower)),
        )
        & report(4, "min pairwise distance > 0.3/√N", dmin > need, format!("{dmin:.4} vs {need:.4}"))
        & report(4, "nearest-neighbor CV ≤ 0.5", cv <= 0.5, format!("{cv:.3}"));
    assert!(pass);
}

#[test]
fn criterion_05_vpw2_sym() {
    let run = vpw2_sym();
    let r = &run.result;
    let dirs = sphere_directions(2, 1024);
    let mut worst = 0.0f64;
    for g in &r.particles {
        for rot in g.group().elements() {
            for u in dirs.chunks_exact(2) {
                // h(gᵀu) for the group element g
                let gu = [rot[0] * u[0] + rot[2] * u[1], rot[1] * u[0] + rot[3] * u[1]];
                let (a, b) = (g.eval(u, None), g.eval(&gu, None));
                worst = worst.max((a - b).abs() / a);
            }
        }
    }
    let pass = bounds_line(5, run, 20)
        & report(5, "every body G-invariant to 1e-10", worst <= 1e-10, format!("max rel. deviation {worst:.1e}"));
    assert!(pass);
}

#[test]
fn criterion_06_vpt2() {
    let run = vpt2();
    let eval = Evaluator::new(2, &run.result.config.discretization).unwrap();
    let v = eval.values(&LinearGauge::identity(2), DiagramId::VPT2.functionals()).unwrap();
    let (x, y) = DiagramId::VPT2.coordinates(&v);
    let pass = bounds_line(6, run, 30)
        & report(
            6,
            "disk maps to (1, 1) ± 2e-3",
            (x - 1.0).abs() <= 2e-3 && (y - 1.0).abs() <= 2e-3,
            format!("({x:.5}, {y:.5})"),
        );
    assert!(pass);
}

#[test]
fn criterion_07_vmu2() {
    let pass = bounds_line(7, vmu2(), 60);
    assert!(pass);
}

#[test]
fn criterion_08_baseline_coverage() {
    let t = Instant::now();
    let base = monte_carlo_diagram(DiagramId::VPW2, 10_000, 1, &BaselineConfig::default()).unwrap();
    let elapsed = t.elapsed();
    let bxy: Vec<(f64, f64)> = base.points.iter().map(|p| (p.x, p.y)).collect();
    let sxy: Vec<(f64, f64)> = vpw2().result.points.iter().map(|p| (p.x, p.y)).collect();
    let (bc, sc) = (covered_cells(&bxy, 50), covered_cells(&sxy, 50));
    let mut union = bxy.clone();
    union.extend_from_slice(&sxy);
    let only_sampler = covered_cells(&union, 50) - bc;
    println!("    sampler reaches {only_sampler} cells that the baseline misses (informational)");
    let pass = report(
        8,
        "sampler occupies more 50×50 cells than 10⁴ Valtr polygons",
        sc > bc,
        format!("sampler {sc}, baseline {bc}, {} polygons skipped", base.failures.len()),
    ) & report(8, "baseline runtime ≤ 10 min", elapsed <= Duration::from_secs(600), format!("{elapsed:.1?}"));
    assert!(pass);
}

#[test]
fn criterion_09_determinism() {
    let cfg = config(DiagramId::VPW2, 0.06, 15);
    let csv = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let r = pool.install(|| run_sampler(DiagramId::VPW2, 8, 3, cfg).unwrap());
        let dir = tempfile::tempdir().unwrap();
        io::persist(dir.path(), &r).unwrap();
        std::fs::read(dir.path().join(io::POINTS_FILE)).unwrap()
    };
    let (a, b, c) = (csv(1), csv(1), csv(3));
    let pass = report(9, "identical seed and config give byte-identical points.csv", a == b && a == c, format!("{} bytes, 1 and 3 threads", a.len()));
    assert!(pass);
}

#[test]
fn criterion_10_three_dimensions() {
    let lines = functionals_3d().unwrap();
    let mut pass = report(10, "ball functionals within 5e-3", lines_pass(&lines), format!("T exact {:.5}", 4.0 * PI / 45.0));
    for d in [DiagramId::VPW3, DiagramId::VPE3] {
        let run = sample(d, 16, 7, config(d, 0.08, 60));
        let ok = run
            .result
            .points
            .iter()
            .all(|p| p.x > 0.0 && p.y > 0.0 && p.x <= 1.0 + TOL && p.y <= 1.0 + TOL);
        let xmax = run.result.points.iter().map(|p| p.x).fold(0.0, f64::max);
        let ymax = run.result.points.iter().map(|p| p.y).fold(0.0, f64::max);
        pass &= report(
            10,
            &format!("{d} N=16 points in (0, 1.02]²"),
            ok,
            format!("max x {xmax:.4}, max y {ymax:.4}, {:.0?}", run.elapsed),
        );
    }
    assert!(pass);
}
