use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use santalo::baseline::{monte_carlo_diagram, BaselineConfig};
use santalo::checks::{run_module, CHECK_MODULES};
use santalo::diagram::DiagramId;
use santalo::fit::{fit_to_target, named_target, FitConfig};
use santalo::gauge::{Gauge, GaugeNetwork};
use santalo::io::{self, RunConfig};
use santalo::sampler::run_sampler_with;
use santalo::Error;

/// Environment variable that caps the worker thread count.
const THREADS_ENV: &str = "SANTALO_THREADS";

const EXIT_FAILURE: u8 = 1;
const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;

#[derive(Parser)]
#[command(name = "santalo", version, about = "Sample Blaschke-Santaló diagrams with gauge-network convex bodies")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the particle sampler on a diagram.
    Sample {
        diagram: String,
        /// Number of particles.
        #[arg(long, default_value_t = 64)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON object of overrides on top of the defaults (RunConfig layout).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Volume lattice spacing of the quadrature.
        #[arg(long)]
        volume_h: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Random convex polygons (VPW2 or VPT2).
    Baseline {
        diagram: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 3)]
        min_vertices: usize,
        #[arg(long, default_value_t = 30)]
        max_vertices: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a gauge network to a named 2D target (circle, square, triangle, ellipse).
    Fit {
        target: String,
        #[arg(long, default_value_t = 32)]
        directions: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the built-in self-checks and print a pass/fail table.
    Check {
        /// Module to check; repeat for several. Defaults to all.
        #[arg(long)]
        module: Vec<String>,
    },
    /// Re-render the SVG and shape files of a stored run.
    Export {
        #[arg(long)]
        run: PathBuf,
        /// Directory of a baseline run to overlay in red.
        #[arg(long)]
        baseline: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_VALIDATION);
    }
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Validation(_) => EXIT_VALIDATION,
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn configure_threads() -> santalo::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Validation(format!("{THREADS_ENV}: {e}")))
}

fn run(cmd: Command) -> santalo::Result<ExitCode> {
    match cmd {
        Command::Sample {
            diagram,
            n,
            seed,
            config,
            max_iters,
            volume_h,
            out,
        } => {
            let diagram: DiagramId = diagram.parse()?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{diagram}-seed{seed}")));
            let mut cfg = RunConfig::new(diagram, n, seed, &out);
            if let Some(path) = config {
                let text = fs::read_to_string(&path)
                    .map_err(|e| Error::Validation(format!("config: {}: {e}", path.display())))?;
                cfg = cfg.with_overrides(&text)?;
            }
            if let Some(k) = max_iters {
                cfg.sampler.lbfgs.max_iters = k;
            }
            if let Some(h) = volume_h {
                cfg.sampler.discretization.quadrature.volume_h = h;
            }
            cfg.validate()?;
            sample(&cfg)
        }
        Command::Baseline {
            diagram,
            samples,
            seed,
            min_vertices,
            max_vertices,
            out,
        } => {
            let diagram: DiagramId = diagram.parse()?;
            let config = BaselineConfig {
                min_vertices,
                max_vertices,
                ..BaselineConfig::default()
            };
            let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/{diagram}-baseline-seed{seed}")));
            let r = monte_carlo_diagram(diagram, samples, seed, &config)?;
            io::persist_baseline(&out, &r)?;
            for (_, msg) in &r.failures {
                eprintln!("skipped: {msg}");
            }
            println!(
                "{diagram}: {} polygons, {} skipped -> {}",
                r.points.len(),
                r.failures.len(),
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit {
            target,
            directions,
            seed,
            out,
        } => {
            let points = named_target(&target)?;
            let out = out.unwrap_or_else(|| PathBuf::from(format!("runs/fit-{target}")));
            let net = GaugeNetwork::init_random(2, directions, seed, 1.0)?;
            let rep = fit_to_target(net, &points, &FitConfig::default())?;
            fs::create_dir_all(&out).map_err(|e| Error::format(&out, e))?;
            write(&out.join("shape.json"), &io::shape_json(&rep.net))?;
            let summary = serde_json::json!({
                "target": target,
                "directions": directions,
                "seed": seed,
                "loss": rep.loss,
                "hausdorff": rep.hausdorff,
                "convex": rep.convex,
                "iterations": rep.minimum.iterations,
                "termination": rep.minimum.termination,
                "theta": rep.net.params(),
            });
            write(&out.join("fit.json"), &format!("{summary:#}\n"))?;
            println!(
                "fit {target}: loss {:.3e}, Hausdorff {:.3e}, convex {} -> {}",
                rep.loss,
                rep.hausdorff,
                rep.convex.unwrap_or(true),
                out.display()
            );
            Ok(if rep.minimum.converged() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NOT_CONVERGED)
            })
        }
        Command::Check { module } => {
            let modules: Vec<String> = if module.is_empty() {
                CHECK_MODULES.iter().map(|s| s.to_string()).collect()
            } else {
                module
            };
            let mut all_pass = true;
            for m in &modules {
                println!("[{m}]");
                for line in run_module(m)? {
                    all_pass &= line.pass;
                    println!("  {line}");
                }
            }
            Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(EXIT_FAILURE) })
        }
        Command::Export { run, baseline } => {
            let r = io::export(&run, baseline.as_deref())?;
            println!("{}: re-rendered {} particles in {}", r.diagram, r.points.len(), run.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn write(path: &Path, text: &str) -> santalo::Result<()> {
    fs::write(path, text).map_err(|e| Error::format(path, e))
}

fn sample(cfg: &RunConfig) -> santalo::Result<ExitCode> {
    let r = run_sampler_with(cfg.diagram, cfg.n, cfg.seed, cfg.sampler, |rec| {
        if rec.iter % 10 == 0 {
            eprintln!("iter {:>5}  loss {:.6e}  |g|∞ {:.3e}", rec.iter, rec.loss, rec.grad_inf);
        }
    })?;
    io::persist(&cfg.output, &r)?;
    for p in &r.points {
        for b in cfg.diagram.violations(p.x, p.y, 0.02) {
            eprintln!("warning: sampler: particle {} at ({:.4}, {:.4}) violates {}", p.particle_id, p.x, p.y, b.name);
        }
    }
    println!(
        "{}: {} particles, {:?} after {} iterations, loss {:.6e} -> {}",
        cfg.diagram,
        r.points.len(),
        r.termination,
        r.log.len(),
        r.final_loss,
        cfg.output.display()
    );
    if r.converged() {
        Ok(ExitCode::SUCCESS)
    } else {
        if let Some(f) = &r.failure {
            eprintln!("error: optimizer did not converge: {f}");
        }
        Ok(ExitCode::from(EXIT_NOT_CONVERGED))
    }
}
