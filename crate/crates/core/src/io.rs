//! Run configuration, persistence and export: `points.csv`, `run.json`,
//! per-particle shapes and SVG plots.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baseline::{BaselineConfig, BaselineResult};
use crate::diagram::{DiagramId, Relation};
use crate::error::{Error, Result};
use crate::gauge::{Gauge, SymmetrizedGauge};
use crate::geometry::convex_hull_3d;
use crate::optim::{IterationRecord, Termination};
use crate::quadrature::sphere_directions;
use crate::sampler::{DiagramPoint, DiagramResult, RawValues, SamplerConfig};

pub const RUN_VERSION: &str = "santalo-run/1";
pub const BASELINE_VERSION: &str = "santalo-baseline/1";

pub const POINTS_FILE: &str = "points.csv";
pub const RUN_FILE: &str = "run.json";
pub const BASELINE_FILE: &str = "baseline.json";
pub const SVG_FILE: &str = "diagram.svg";
pub const SHAPES_DIR: &str = "shapes";

pub const CSV_HEADER: [&str; 10] = ["particle_id", "x", "y", "vol", "per", "w", "e", "t", "mu1", "mu2"];

/// Boundary samples per 2D shape file.
pub const SHAPE_DIRECTIONS_2D: usize = 1024;
/// Sphere samples per 3D mesh.
pub const SHAPE_DIRECTIONS_3D: usize = 1000;

/// Everything needed to reproduce a sampler run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub diagram: DiagramId,
    pub n: usize,
    pub seed: u64,
    pub sampler: SamplerConfig,
    pub output: PathBuf,
}

impl RunConfig {
    pub fn new(diagram: DiagramId, n: usize, seed: u64, output: impl Into<PathBuf>) -> Self {
        Self {
            diagram,
            n,
            seed,
            sampler: SamplerConfig::default_for(diagram.dim()),
            output: output.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Validation(format!("sampler: N ≥ 2 required (got N = {})", self.n)));
        }
        self.sampler.validate(self.diagram.dim())
    }

    /// Applies a JSON object of overrides on top of `self`. Nested objects
    /// merge key by key; keys that `RunConfig` does not have are rejected.
    pub fn with_overrides(&self, overrides: &str) -> Result<Self> {
        let patch: Value = serde_json::from_str(overrides)
            .map_err(|e| Error::Validation(format!("config: not valid JSON: {e}")))?;
        let mut base = serde_json::to_value(self).map_err(|e| Error::Validation(e.to_string()))?;
        merge(&mut base, patch, "")?;
        serde_json::from_value(base).map_err(|e| Error::Validation(format!("config: {e}")))
    }
}

fn merge(base: &mut Value, patch: Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let key = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &key)?,
                    None => return Err(Error::Validation(format!("config: unknown key `{key}`"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            if slot.is_object() && !v.is_object() {
                return Err(Error::Validation(format!("config: `{path}` must be an object")));
            }
            *slot = v;
            Ok(())
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunFile {
    version: String,
    config: RunConfig,
    termination: Termination,
    converged: bool,
    final_loss: f64,
    failure: Option<String>,
    log: Vec<IterationRecord>,
    particles: Vec<SymmetrizedGauge>,
}

fn format_f64(v: f64) -> String {
    // shortest representation that parses back to the same bits
    format!("{v:?}")
}

/// `points.csv` contents; absent functionals are empty fields.
pub fn points_csv(points: &[DiagramPoint]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let write_err = |e: csv::Error| Error::Validation(format!("io: csv: {e}"));
    w.write_record(CSV_HEADER).map_err(write_err)?;
    for p in points {
        let mut rec = vec![p.particle_id.to_string(), format_f64(p.x), format_f64(p.y)];
        rec.extend(p.values.columns().iter().map(|c| c.map(format_f64).unwrap_or_default()));
        w.write_record(&rec).map_err(write_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(format!("io: csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is ASCII"))
}

pub fn read_points_csv(path: &Path) -> Result<Vec<DiagramPoint>> {
    let text = fs::read_to_string(path).map_err(|e| Error::format(path, e))?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(|e| Error::format(path, e))?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::format(path, format!("row {row}: {} fields", rec.len())));
        }
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse()
                .map_err(|e| Error::format(path, format!("row {row}, column {}: {e}", CSV_HEADER[k])))
        };
        let opt = |k: usize| -> Result<Option<f64>> { if rec[k].is_empty() { Ok(None) } else { num(k).map(Some) } };
        let particle_id = rec[0]
            .parse()
            .map_err(|e| Error::format(path, format!("row {row}, column particle_id: {e}")))?;
        out.push(DiagramPoint {
            particle_id,
            x: num(1)?,
            y: num(2)?,
            values: RawValues {
                vol: opt(3)?,
                per: opt(4)?,
                w: opt(5)?,
                e: opt(6)?,
                t: opt(7)?,
                mu1: opt(8)?,
                mu2: opt(9)?,
            },
        });
    }
    if !text.ends_with('\n') {
        return Err(Error::format(path, "truncated: missing final newline"));
    }
    Ok(out)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::format(path, e))
}

/// Writes `points.csv`, `run.json`, the shape files and `diagram.svg`.
pub fn persist(dir: &Path, result: &DiagramResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::format(dir, e))?;
    let run = RunFile {
        version: RUN_VERSION.into(),
        config: RunConfig {
            diagram: result.diagram,
            n: result.particles.len(),
            seed: result.seed,
            sampler: result.config,
            output: dir.to_path_buf(),
        },
        termination: result.termination,
        converged: result.converged(),
        final_loss: result.final_loss,
        failure: result.failure.clone(),
        log: result.log.clone(),
        particles: result.particles.clone(),
    };
    write_file(&dir.join(POINTS_FILE), &points_csv(&result.points)?)?;
    write_file(&dir.join(RUN_FILE), &to_json(&run))?;
    write_shapes(dir, &result.particles)?;
    write_file(&dir.join(SVG_FILE), &render_svg(result.diagram, &xy(&result.points), &[]))
}

/// Reads a directory written by [`persist`].
pub fn load(dir: &Path) -> Result<DiagramResult> {
    let path = dir.join(RUN_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::format(&path, e))?;
    let value: Value = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    let found = value.get("version").and_then(Value::as_str).unwrap_or("<missing>");
    if found != RUN_VERSION {
        return Err(Error::VersionMismatch {
            found: found.into(),
            expected: RUN_VERSION.into(),
        });
    }
    let run: RunFile = serde_json::from_value(value).map_err(|e| Error::format(&path, e))?;
    let points = read_points_csv(&dir.join(POINTS_FILE))?;
    let n = run.config.n;
    if points.len() != n || run.particles.len() != n {
        return Err(Error::format(
            dir,
            format!(
                "expected {n} particles, found {} points and {} networks",
                points.len(),
                run.particles.len()
            ),
        ));
    }
    if let Some(k) = points.iter().enumerate().position(|(k, p)| p.particle_id != k) {
        return Err(Error::format(dir.join(POINTS_FILE), format!("row {k} has particle_id {}", points[k].particle_id)));
    }
    Ok(DiagramResult {
        diagram: run.config.diagram,
        seed: run.config.seed,
        config: run.config.sampler,
        points,
        particles: run.particles,
        log: run.log,
        termination: run.termination,
        final_loss: run.final_loss,
        failure: run.failure,
    })
}

/// The config echoed in a stored run.
pub fn load_config(dir: &Path) -> Result<RunConfig> {
    let path = dir.join(RUN_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::format(&path, e))?;
    let run: RunFile = serde_json::from_str(&text).map_err(|e| Error::format(&path, e))?;
    Ok(run.config)
}

fn xy(points: &[DiagramPoint]) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.x, p.y)).collect()
}

/// `shapes/particle_<k>.json` (2D boundary polyline) or `.obj` (3D mesh).
pub fn write_shapes(dir: &Path, particles: &[SymmetrizedGauge]) -> Result<()> {
    let shapes = dir.join(SHAPES_DIR);
    fs::create_dir_all(&shapes).map_err(|e| Error::format(&shapes, e))?;
    for (k, g) in particles.iter().enumerate() {
        if g.dim() == 2 {
            write_file(&shapes.join(format!("particle_{k}.json")), &shape_json(g))?;
        } else {
            write_file(&shapes.join(format!("particle_{k}.obj")), &shape_obj(g))?;
        }
    }
    Ok(())
}

pub fn shape_json<G: Gauge>(g: &G) -> String {
    let pts = g.boundary_points(&sphere_directions(2, SHAPE_DIRECTIONS_2D));
    let pairs: Vec<[f64; 2]> = pts.chunks_exact(2).map(|c| [c[0], c[1]]).collect();
    let mut s = serde_json::to_string(&pairs).expect("finite points");
    s.push('\n');
    s
}

/// Sphere directions mapped through the body map, triangulated by the hull
/// of the directions themselves.
pub fn shape_obj<G: Gauge>(g: &G) -> String {
    let dirs = sphere_directions(3, SHAPE_DIRECTIONS_3D);
    let unit: Vec<[f64; 3]> = dirs.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    let faces = convex_hull_3d(&unit);
    let pts = g.boundary_points(&dirs);
    let mut s = String::new();
    for p in pts.chunks_exact(3) {
        let _ = writeln!(s, "v {:?} {:?} {:?}", p[0], p[1], p[2]);
    }
    for f in faces {
        let _ = writeln!(s, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    s
}

const SVG_SIZE: f64 = 560.0;
const SVG_MARGIN: f64 = 56.0;
const SVG_RANGE: f64 = 1.1;

fn sx(x: f64) -> f64 {
    SVG_MARGIN + x / SVG_RANGE * (SVG_SIZE - 2.0 * SVG_MARGIN)
}

fn sy(y: f64) -> f64 {
    SVG_SIZE - SVG_MARGIN - y / SVG_RANGE * (SVG_SIZE - 2.0 * SVG_MARGIN)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const BOUND_COLORS: [&str; 6] = ["#2a7f3f", "#8a5a00", "#6b3fa0", "#00718f", "#555555", "#999999"];

/// Scatter plot of the diagram with each known bound as its own `<path>`;
/// `overlay` points (random-polygon baseline) are drawn in red.
pub fn render_svg(diagram: DiagramId, points: &[(f64, f64)], overlay: &[(f64, f64)]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_SIZE}" height="{SVG_SIZE}" viewBox="0 0 {SVG_SIZE} {SVG_SIZE}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
        SVG_SIZE / 2.0,
        diagram
    );
    let (x0, y0, x1, y1) = (sx(0.0), sy(0.0), sx(SVG_RANGE), sy(SVG_RANGE));
    let _ = writeln!(
        s,
        r#"<rect x="{x0:.2}" y="{y1:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        x1 - x0,
        y0 - y1
    );
    for k in 0..=5 {
        let t = 0.2 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{t:.1}</text><text x="{:.2}" y="{:.2}" text-anchor="end">{t:.1}</text>"#,
            sx(t),
            y0 + 16.0,
            x0 - 6.0,
            sy(t) + 4.0
        );
    }
    let _ = writeln!(s, r#"<g id="bounds" fill="none" stroke-width="1.5">"#);
    for (k, b) in diagram.bounds().iter().enumerate() {
        let line = b.polyline(201);
        if line.len() < 2 {
            continue;
        }
        let mut d = String::new();
        for (i, p) in line.iter().enumerate() {
            let _ = write!(d, "{}{:.2},{:.2}", if i == 0 { "M" } else { " L" }, sx(p[0]), sy(p[1]));
        }
        let dash = if b.hard { "" } else { r#" stroke-dasharray="6 4""# };
        let side = match b.relation {
            Relation::Below => "below",
            Relation::Above => "above",
        };
        let _ = writeln!(
            s,
            r#"<path class="bound" data-name="{}" data-side="{side}" stroke="{}"{dash} d="{d}"><title>{}</title></path>"#,
            escape(b.name),
            BOUND_COLORS[k % BOUND_COLORS.len()],
            escape(b.name)
        );
    }
    let _ = writeln!(s, "</g>");
    if !overlay.is_empty() {
        let _ = writeln!(s, r#"<g id="baseline" fill="red" fill-opacity="0.6">"#);
        for &(x, y) in overlay {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, sx(x), sy(y));
        }
        let _ = writeln!(s, "</g>");
    }
    if !points.is_empty() {
        let _ = writeln!(s, r##"<g id="particles" fill="#1f4e9c">"##);
        for &(x, y) in points {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, sx(x), sy(y));
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// Re-renders `diagram.svg` and the shapes of a stored run, optionally with
/// a baseline overlay read from another directory.
pub fn export(dir: &Path, baseline: Option<&Path>) -> Result<DiagramResult> {
    let result = load(dir)?;
    let overlay = match baseline {
        Some(b) => xy(&read_points_csv(&b.join(POINTS_FILE))?),
        None => vec![],
    };
    write_shapes(dir, &result.particles)?;
    write_file(&dir.join(SVG_FILE), &render_svg(result.diagram, &xy(&result.points), &overlay))?;
    Ok(result)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BaselineFile {
    version: String,
    diagram: DiagramId,
    samples: usize,
    seed: u64,
    config: BaselineConfig,
    failures: Vec<(usize, String)>,
}

/// Writes `points.csv` (sample index as `particle_id`), `baseline.json` and
/// a red-overlay `diagram.svg`.
pub fn persist_baseline(dir: &Path, result: &BaselineResult) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::format(dir, e))?;
    let meta = BaselineFile {
        version: BASELINE_VERSION.into(),
        diagram: result.diagram,
        samples: result.samples,
        seed: result.seed,
        config: result.config,
        failures: result.failures.clone(),
    };
    write_file(&dir.join(POINTS_FILE), &points_csv(&result.points)?)?;
    write_file(&dir.join(BASELINE_FILE), &to_json(&meta))?;
    write_file(&dir.join(SVG_FILE), &render_svg(result.diagram, &[], &xy(&result.points)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_merge_and_reject_unknown_keys() {
        let base = RunConfig::new(DiagramId::VPW2, 8, 1, "out");
        let c = base
            .with_overrides(r#"{"seed": 9, "sampler": {"alpha": 0.5, "lbfgs": {"max_iters": 3}}}"#)
            .unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.sampler.alpha, 0.5);
        assert_eq!(c.sampler.lbfgs.max_iters, 3);
        assert_eq!(c.sampler.s, base.sampler.s);
        let err = base.with_overrides(r#"{"sampler": {"alpah": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("sampler.alpah"), "{err}");
        assert!(base.with_overrides(r#"{"sampler": 3}"#).is_err());
        assert!(base.with_overrides("{").is_err());
    }

    #[test]
    fn csv_empty_fields_for_absent_values() {
        let mut values = RawValues::default();
        values.vol = Some(1.5);
        let csv = points_csv(&[DiagramPoint {
            particle_id: 0,
            x: 0.1,
            y: 1.0 / 3.0,
            values,
        }])
        .unwrap();
        assert_eq!(csv, "particle_id,x,y,vol,per,w,e,t,mu1,mu2\n0,0.1,0.3333333333333333,1.5,,,,,,\n");
    }

    #[test]
    fn svg_has_one_path_per_bound() {
        let svg = render_svg(DiagramId::VPW2, &[(0.5, 0.5)], &[(0.6, 0.6)]);
        assert_eq!(svg.matches(r#"<path class="bound""#).count(), DiagramId::VPW2.bounds().len());
        assert!(svg.contains("Pólya: y &lt; (π²/6) x"));
        assert!(svg.contains(r#"fill="red""#));
    }
}
