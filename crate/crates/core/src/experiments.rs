//! Configuration-driven experiment runner. A run config is TOML:
//!
//! ```toml
//! seed = 7
//!
//! [[experiment]]
//! kind = "segcap"
//! name = "segment"
//! n = 1000
//!
//! [[experiment.expect]]
//! metric = "cap"
//! min = 1.49
//! max = 1.50
//! ```
//!
//! Every experiment writes a JSON record, optional CSV tables and a gnuplot
//! script, and the run writes `manifest.json` with SHA-256 digests of all of
//! them.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::coarse_grain::{self, CoarseGrainScales};
use crate::gff::{FieldSampler, SamplingMethod};
use crate::interlacements::{self, InterlacementSpace};
use crate::io::{self, FieldSidecar};
use crate::lattice::spectral::TorusGreen;
use crate::lattice::tube::{build_tube, tube_bound, TubeShape};
use crate::lattice::{
    distance, equilibrium_measure, green_column, CorrelationScale, PlaneGreen, Point, SolverConfig, WalkModel, Window,
    WindowKind,
};
use crate::percolation::{estimate_theta_levels, LevelSetConfig, ThetaEstimate, DEFAULT_SIDE_FACTOR};
use crate::{bessel, paths, rng, segment, stats};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Task(String),
}

fn task_err(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Task(e.to_string())
}

fn read_text(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.into(), source })
}

fn default_torus() -> WindowKind {
    WindowKind::Torus
}
fn default_box() -> WindowKind {
    WindowKind::Box
}
fn default_side_factor() -> usize {
    DEFAULT_SIDE_FACTOR
}
fn default_spectral() -> SamplingMethod {
    SamplingMethod::Spectral
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegcapParams {
    pub n: usize,
    #[serde(default = "SegcapParams::default_tol")]
    pub tol: f64,
}

impl SegcapParams {
    fn default_tol() -> f64 {
        1e-12
    }
}

/// A point set given inline or as a file of coordinate pairs.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSource {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl PointSource {
    pub fn inline(points: Vec<Point>) -> Self {
        Self { points: Some(points), file: None }
    }

    fn load(&self, base: &Path) -> Result<Vec<Point>, ExperimentError> {
        match (&self.points, &self.file) {
            (Some(p), None) => Ok(p.clone()),
            (None, Some(f)) => io::parse_points(&read_text(&base.join(f))?).map_err(task_err),
            _ => Err(ExperimentError::Task("give exactly one of `points` and `file`".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenParams {
    #[serde(rename = "N")]
    pub mass_scale: u64,
    #[serde(default = "default_torus")]
    pub window_kind: WindowKind,
    pub window_side: usize,
    #[serde(default)]
    pub source: Point,
    pub set: PointSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityParams {
    #[serde(rename = "N")]
    pub mass_scale: u64,
    #[serde(default = "default_box")]
    pub window_kind: WindowKind,
    pub window_side: usize,
    pub set: PointSource,
    #[serde(default)]
    pub killing: Option<PointSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TubeParams {
    #[serde(rename = "N")]
    pub mass_scale: u64,
    pub blocks: usize,
    /// Kept block indices (1-based); all blocks when absent.
    #[serde(default)]
    pub indices: Option<Vec<usize>>,
    #[serde(default = "TubeParams::default_shape")]
    pub shape: TubeShape,
    #[serde(default = "TubeParams::default_scale")]
    pub scale: f64,
    #[serde(default = "TubeParams::default_epsilon")]
    pub epsilon: f64,
    /// Capacity of the unit segment; the reference value when absent.
    #[serde(default)]
    pub continuum_cap: Option<f64>,
}

impl TubeParams {
    fn default_shape() -> TubeShape {
        TubeShape::Segments
    }
    fn default_scale() -> f64 {
        1.0
    }
    fn default_epsilon() -> f64 {
        0.15
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleParams {
    #[serde(rename = "N")]
    pub mass_scale: u64,
    pub side: usize,
    #[serde(default = "default_spectral")]
    pub method: SamplingMethod,
    #[serde(default = "default_torus")]
    pub window_kind: WindowKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaParams {
    #[serde(rename = "N")]
    pub mass_scale: u64,
    pub abar: f64,
    #[serde(default, rename = "R")]
    pub radius: Option<u64>,
    pub samples: u64,
    #[serde(default = "default_side_factor")]
    pub side_factor: usize,
}

/// One `(a, N)` cell; the level is given directly or through `a²·log N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridCell {
    #[serde(rename = "N")]
    pub mass_scale: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2_log_n: Option<f64>,
}

impl GridCell {
    pub fn level(&self) -> Result<f64, String> {
        match (self.a, self.a2_log_n) {
            (Some(a), None) => Ok(a),
            (None, Some(t)) if t >= 0.0 && self.mass_scale > 1 => Ok((t / (self.mass_scale as f64).ln()).sqrt()),
            (None, Some(t)) => Err(format!("a²·log N = {t} is not usable at N = {}", self.mass_scale)),
            _ => Err("give exactly one of `a` and `a2_log_n`".into()),
        }
    }
}

/// Grid file for the scaling experiment: a list of `[[cell]]` tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub cell: Vec<GridCell>,
}

pub fn parse_grid_config(text: &str) -> Result<Vec<GridCell>, ExperimentError> {
    let grid: GridConfig = toml::from_str(text).map_err(|e| ExperimentError::Config(vec![e.to_string()]))?;
    let errors: Vec<String> =
        grid.cell.iter().enumerate().filter_map(|(i, c)| c.level().err().map(|e| format!("cell[{i}]: {e}"))).collect();
    if errors.is_empty() {
        Ok(grid.cell)
    } else {
        Err(ExperimentError::Config(errors))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingParams {
    #[serde(default)]
    pub grid: Vec<GridCell>,
    #[serde(default)]
    pub grid_file: Option<PathBuf>,
    pub samples: u64,
    #[serde(default = "default_side_factor")]
    pub side_factor: usize,
    /// Decay exponent for the reference column; the computed one when absent.
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocUniqParams {
    pub x: Point,
    #[serde(rename = "R")]
    pub radius: f64,
    #[serde(default)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterlaceParams {
    #[serde(rename = "N")]
    pub mass_scale: u64,
    pub u: f64,
    pub side: usize,
    #[serde(default = "default_box")]
    pub window_kind: WindowKind,
    pub samples: u64,
    #[serde(default)]
    pub locuniq: Option<LocUniqParams>,
    /// Level `a` for the isomorphism marginal test.
    #[serde(default)]
    pub isom: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PathKind {
    Straight,
    Spiral,
    Bridges,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratedPath {
    pub kind: PathKind,
    #[serde(default)]
    pub angle: f64,
    #[serde(default = "GeneratedPath::default_turns")]
    pub turns: f64,
    #[serde(default)]
    pub index: u64,
}

impl GeneratedPath {
    fn default_turns() -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoarsegrainParams {
    #[serde(default)]
    pub path_file: Option<PathBuf>,
    #[serde(default)]
    pub generate: Option<GeneratedPath>,
    #[serde(default)]
    pub x: Point,
    #[serde(rename = "N")]
    pub mass_scale: u64,
    #[serde(rename = "L")]
    pub l: u64,
    #[serde(rename = "M")]
    pub m: u64,
    /// Tree depth; with `radius`, replaces the automatic scale choice.
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default, rename = "R")]
    pub radius: Option<f64>,
    #[serde(default)]
    pub exclusion: Option<f64>,
    #[serde(default = "default_true")]
    pub verify: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Experiment {
    Segcap(SegcapParams),
    Green(GreenParams),
    Capacity(CapacityParams),
    Tube(TubeParams),
    Sample(SampleParams),
    Theta(ThetaParams),
    Scaling(ScalingParams),
    Interlace(InterlaceParams),
    Coarsegrain(CoarsegrainParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Segcap(_) => "segcap",
            Experiment::Green(_) => "green",
            Experiment::Capacity(_) => "capacity",
            Experiment::Tube(_) => "tube",
            Experiment::Sample(_) => "sample",
            Experiment::Theta(_) => "theta",
            Experiment::Scaling(_) => "scaling",
            Experiment::Interlace(_) => "interlace",
            Experiment::Coarsegrain(_) => "coarsegrain",
        }
    }
}

/// Bounds on a named metric of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    pub metric: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub name: String,
    pub seed: u64,
    pub experiment: Experiment,
    pub expect: Vec<Expectation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub tasks: Vec<Task>,
    /// The parsed document, kept verbatim for the manifest.
    pub document: Value,
    /// Directory against which relative file names resolve.
    pub base_dir: PathBuf,
}

const KINDS: [&str; 9] = ["segcap", "green", "capacity", "tube", "sample", "theta", "scaling", "interlace", "coarsegrain"];

fn parse_table(table: toml::Table, base_dir: &Path) -> Result<RunConfig, ExperimentError> {
    let mut errors = Vec::new();
    for key in table.keys() {
        if !["seed", "experiment"].contains(&key.as_str()) {
            errors.push(format!("unknown top-level key `{key}`"));
        }
    }
    let seed = match table.get("seed") {
        None => 0,
        Some(toml::Value::Integer(s)) if *s >= 0 => *s as u64,
        Some(other) => {
            errors.push(format!("`seed` must be a nonnegative integer, got {other}"));
            0
        }
    };
    let entries = match table.get("experiment") {
        None => Vec::new(),
        Some(toml::Value::Array(a)) => a.clone(),
        Some(_) => {
            errors.push("`experiment` must be an array of tables".into());
            Vec::new()
        }
    };
    let mut tasks = Vec::new();
    let mut names = std::collections::HashSet::new();
    for (i, entry) in entries.into_iter().enumerate() {
        let toml::Value::Table(mut t) = entry else {
            errors.push(format!("experiment[{i}]: not a table"));
            continue;
        };
        let kind = match t.get("kind").and_then(|k| k.as_str()) {
            Some(k) if KINDS.contains(&k) => k.to_string(),
            Some(k) => {
                errors.push(format!("experiment[{i}]: unknown kind `{k}` (expected one of {})", KINDS.join(", ")));
                continue;
            }
            None => {
                errors.push(format!("experiment[{i}]: missing `kind`"));
                continue;
            }
        };
        let name = match t.remove("name") {
            None => format!("{kind}-{i}"),
            Some(toml::Value::String(s)) if !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) => s,
            Some(other) => {
                errors.push(format!("experiment[{i}]: `name` must be a nonempty string of [A-Za-z0-9._-], got {other}"));
                continue;
            }
        };
        if !names.insert(name.clone()) {
            errors.push(format!("experiment[{i}]: duplicate name `{name}`"));
        }
        let task_seed = match t.remove("seed") {
            None => rng::derive(seed, i as u64),
            Some(toml::Value::Integer(s)) if s >= 0 => s as u64,
            Some(other) => {
                errors.push(format!("experiment[{i}]: `seed` must be a nonnegative integer, got {other}"));
                continue;
            }
        };
        let expect: Vec<Expectation> = match t.remove("expect") {
            None => Vec::new(),
            Some(v) => match v.try_into() {
                Ok(e) => e,
                Err(e) => {
                    errors.push(format!("experiment[{i}].expect: {e}"));
                    continue;
                }
            },
        };
        let experiment: Experiment = match toml::Value::Table(t).try_into() {
            Ok(e) => e,
            Err(e) => {
                errors.push(format!("experiment[{i}] ({kind}): {}", e.to_string().trim()));
                continue;
            }
        };
        for (j, x) in expect.iter().enumerate() {
            if x.min.is_none() && x.max.is_none() {
                errors.push(format!("experiment[{i}].expect[{j}]: give `min` and/or `max`"));
            }
        }
        if let Experiment::Scaling(s) = &experiment {
            if s.grid.is_empty() == s.grid_file.is_none() {
                errors.push(format!("experiment[{i}] (scaling): give exactly one of `grid` and `grid_file`"));
            }
            for (j, c) in s.grid.iter().enumerate() {
                if let Err(e) = c.level() {
                    errors.push(format!("experiment[{i}].grid[{j}]: {e}"));
                }
            }
        }
        if let Experiment::Coarsegrain(c) = &experiment {
            if c.path_file.is_some() == c.generate.is_some() {
                errors.push(format!("experiment[{i}] (coarsegrain): give exactly one of `path_file` and `generate`"));
            }
            if c.depth.is_some() != c.radius.is_some() {
                errors.push(format!("experiment[{i}] (coarsegrain): `depth` and `R` go together"));
            }
        }
        tasks.push(Task { name, seed: task_seed, experiment, expect });
    }
    if !errors.is_empty() {
        return Err(ExperimentError::Config(errors));
    }
    let document = serde_json::to_value(&table).map_err(|e| ExperimentError::Config(vec![e.to_string()]))?;
    Ok(RunConfig { seed, tasks, document, base_dir: base_dir.to_path_buf() })
}

impl RunConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, ExperimentError> {
        let table: toml::Table = toml::from_str(text).map_err(|e| ExperimentError::Config(vec![e.to_string()]))?;
        parse_table(table, base_dir)
    }

    /// Rebuilds the config recorded in a manifest.
    pub fn from_manifest(text: &str) -> Result<Self, ExperimentError> {
        let manifest: RunManifest =
            serde_json::from_str(text).map_err(|e| ExperimentError::Config(vec![format!("manifest: {e}")]))?;
        let table: toml::Table = serde_json::from_value(manifest.config)
            .map_err(|e| ExperimentError::Config(vec![format!("manifest config: {e}")]))?;
        parse_table(table, Path::new(&manifest.base_dir))
    }

    /// A one-task config, as produced by the individual subcommands.
    pub fn single(name: &str, seed: u64, experiment: &Experiment, base_dir: &Path) -> Result<Self, ExperimentError> {
        let mut entry = toml::Table::try_from(experiment).map_err(|e| ExperimentError::Config(vec![e.to_string()]))?;
        entry.insert("name".into(), toml::Value::String(name.into()));
        entry.insert("seed".into(), toml::Value::Integer(seed as i64));
        let mut table = toml::Table::new();
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
        table.insert("experiment".into(), toml::Value::Array(vec![toml::Value::Table(entry)]));
        parse_table(table, base_dir)
    }

    /// Reads a TOML config, or a `.json` manifest of an earlier run.
    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = read_text(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            return Self::from_manifest(&text);
        }
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }
}

/// What one experiment produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskOutput {
    pub record: Value,
    pub metrics: BTreeMap<String, f64>,
    /// `(suffix, contents)` pairs written as `<name><suffix>`.
    pub files: Vec<(String, Vec<u8>)>,
}

impl TaskOutput {
    fn metric(&mut self, key: &str, value: f64) {
        self.metrics.insert(key.into(), value);
    }
}

fn csv_bytes<R: Serialize>(rows: &[R]) -> Result<Vec<u8>, ExperimentError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(task_err)?;
    }
    w.into_inner().map_err(task_err)
}

fn window_for(kind: WindowKind, side: usize) -> Result<Window, ExperimentError> {
    Window::new(kind, side, [0, 0]).map_err(task_err)
}

fn run_segcap(p: &SegcapParams, name: &str) -> Result<TaskOutput, ExperimentError> {
    let r = segment::minimize_segment(p.n, p.tol).map_err(task_err)?;
    #[derive(Serialize)]
    struct Row {
        node: f64,
        weight: f64,
    }
    let rows: Vec<Row> = r.nodes.iter().zip(&r.weights).map(|(&node, &weight)| Row { node, weight }).collect();
    let mut out = TaskOutput {
        record: json!({"n": r.n, "cap": r.cap, "tau": r.tau, "energy": r.energy, "iterations": r.iterations, "residual": r.residual}),
        ..Default::default()
    };
    out.metric("cap", r.cap);
    out.metric("tau", r.tau);
    out.metric("residual", r.residual);
    out.files.push(("-weights.csv".into(), csv_bytes(&rows)?));
    out.files.push(("-plot.gp".into(), plot_script(&format!("{name}-weights.csv"), "node", "weight", "segment equilibrium weights").into_bytes()));
    Ok(out)
}

fn run_green(p: &GreenParams, base: &Path, name: &str) -> Result<TaskOutput, ExperimentError> {
    let model = WalkModel::new(p.mass_scale).map_err(task_err)?;
    let window = window_for(p.window_kind, p.window_side)?;
    let set = p.set.load(base)?;
    let column = green_column(&model, &window, &[], p.source, SolverConfig::default()).map_err(task_err)?;
    #[derive(Serialize)]
    struct Row {
        x: i64,
        y: i64,
        distance: f64,
        green: f64,
        asymptotic: f64,
        ratio: f64,
    }
    let n = p.mass_scale as f64;
    let mut rows = Vec::with_capacity(set.len());
    for &q in &set {
        let i = window.index_or_err(q).map_err(task_err)?;
        let d = distance(q, p.source);
        let asymptotic = 2.0 / std::f64::consts::PI * bessel::k0_value(2.0 * d.max(1.0) / n);
        rows.push(Row { x: q[0], y: q[1], distance: d, green: column.values[i], asymptotic, ratio: column.values[i] / asymptotic });
    }
    let mut out = TaskOutput::default();
    let g0 = column.values[window.index_or_err(p.source).map_err(task_err)?];
    out.metric("g_source", g0);
    out.metric("residual", column.rel_residual);
    if !rows.is_empty() {
        out.metric("ratio_min", rows.iter().map(|r| r.ratio).fold(f64::INFINITY, f64::min));
        out.metric("ratio_max", rows.iter().map(|r| r.ratio).fold(f64::NEG_INFINITY, f64::max));
    }
    out.record = json!({"N": p.mass_scale, "window": window, "source": p.source, "g_source": g0,
        "residual": column.rel_residual, "iterations": column.iterations});
    out.files.push(("-green.csv".into(), csv_bytes(&rows)?));
    out.files.push(("-plot.gp".into(), plot_script(&format!("{name}-green.csv"), "distance", "ratio", "Green function over its Bessel asymptotic").into_bytes()));
    Ok(out)
}

fn run_capacity(p: &CapacityParams, base: &Path) -> Result<TaskOutput, ExperimentError> {
    let model = WalkModel::new(p.mass_scale).map_err(task_err)?;
    let window = window_for(p.window_kind, p.window_side)?;
    let set = p.set.load(base)?;
    let killing = p.killing.as_ref().map(|k| k.load(base)).transpose()?.unwrap_or_default();
    let eq = equilibrium_measure(&model, &window, &set, &killing).map_err(task_err)?;
    #[derive(Serialize)]
    struct Row {
        x: i64,
        y: i64,
        weight: f64,
    }
    let rows: Vec<Row> = eq.support.iter().zip(&eq.weights).map(|(q, &weight)| Row { x: q[0], y: q[1], weight }).collect();
    let mut out = TaskOutput {
        record: json!({"N": p.mass_scale, "window": window, "set_size": set.len(), "killing_size": killing.len(),
            "cap": eq.cap, "residual": eq.residual}),
        ..Default::default()
    };
    out.metric("cap", eq.cap);
    out.metric("residual", eq.residual);
    out.files.push(("-equilibrium.csv".into(), csv_bytes(&rows)?));
    Ok(out)
}

fn run_tube(p: &TubeParams) -> Result<TaskOutput, ExperimentError> {
    let indices = p.indices.clone().unwrap_or_else(|| (1..=p.blocks).collect());
    let tube = build_tube(p.mass_scale, p.blocks, &indices, p.shape, p.scale).map_err(task_err)?;
    let green = PlaneGreen::new(WalkModel::new(p.mass_scale).map_err(task_err)?);
    let continuum = p.continuum_cap.unwrap_or_else(segment::cap_reference);
    let bound = tube_bound(&tube, &green, p.epsilon, continuum).map_err(task_err)?;
    let mut out = TaskOutput {
        record: json!({"N": p.mass_scale, "blocks": p.blocks, "indices": tube.indices, "shape": p.shape, "scale": p.scale,
            "epsilon": p.epsilon, "continuum_cap": continuum, "cap": bound.cap, "kappa": bound.kappa,
            "fitted_c": bound.fitted_c, "separation_delta": tube.separation_delta, "diameter_slack": tube.diameter_slack,
            "upper_bound": (1.0 + p.epsilon) * continuum}),
        ..Default::default()
    };
    out.metric("cap", bound.cap);
    out.metric("kappa", bound.kappa);
    out.metric("fitted_c", bound.fitted_c.unwrap_or(f64::MAX));
    out.metric("holds_at_unit_c", if bound.holds_at(1.0) { 1.0 } else { 0.0 });
    out.metric("cap_over_continuum", bound.cap / continuum);
    Ok(out)
}

fn run_sample(p: &SampleParams, seed: u64, name: &str) -> Result<TaskOutput, ExperimentError> {
    let model = WalkModel::new(p.mass_scale).map_err(task_err)?;
    let window = window_for(p.window_kind, p.side)?;
    let sampler = FieldSampler::new(&model, &window, p.method).map_err(task_err)?;
    let field = sampler.sample(seed, 0);
    let (mean, _) = stats::mean_stderr(&field.values);
    let var = field.values.iter().map(|v| v * v).sum::<f64>() / field.values.len() as f64;
    let sidecar = FieldSidecar::of(&field);
    let mut out = TaskOutput { record: serde_json::to_value(&sidecar).map_err(task_err)?, ..Default::default() };
    out.metric("mean", mean);
    out.metric("mean_square", var);
    let suffix = if name.ends_with(".bin") { "" } else { ".bin" };
    out.files.push((suffix.into(), io::encode_field(&field.values)));
    Ok(out)
}

fn run_theta(p: &ThetaParams, seed: u64) -> Result<TaskOutput, ExperimentError> {
    let mut config = LevelSetConfig::new(p.abar, p.mass_scale, p.side_factor, p.samples, seed).map_err(task_err)?;
    if let Some(r) = p.radius {
        config.radius = r;
        config.validate().map_err(task_err)?;
    }
    let est = estimate_theta_levels(&config, &[p.abar]).map_err(task_err)?.remove(0);
    let mut out = TaskOutput {
        record: json!({"config": config, "estimate": est,
            "theta_sqrt_log_n": est.p_hat * (p.mass_scale as f64).ln().sqrt()}),
        ..Default::default()
    };
    out.metric("p_hat", est.p_hat);
    out.metric("stderr", est.stderr);
    Ok(out)
}

/// One row of the scaling table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub a: f64,
    #[serde(rename = "N")]
    pub mass_scale: u64,
    pub g_n: f64,
    pub xi: f64,
    pub xi_rounded: u64,
    pub abar: f64,
    pub theta_abar_n: f64,
    pub theta_abar_n_se: f64,
    pub theta_0_xi: f64,
    pub theta_0_xi_se: f64,
    pub log_ratio: f64,
    pub log_ratio_se: f64,
    pub log_n_over_xi: f64,
    pub minus_tau_log_n_over_xi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    /// Cells that could not be run, with the reason.
    pub skipped: Vec<(GridCell, String)>,
    pub tau: f64,
    pub samples: u64,
    pub side_factor: usize,
}

/// `(a, N)` grid → rows of `θ̂(ā, N)` against `θ̂(0, ξ)`. All levels at the
/// same `N` share one coupled run, seeded by `derive(seed, N)`.
pub fn scaling_experiment(
    grid: &[GridCell],
    samples: u64,
    side_factor: usize,
    tau: f64,
    seed: u64,
) -> Result<ScalingTable, ExperimentError> {
    let mut skipped = Vec::new();
    let mut cells: Vec<CorrelationScale> = Vec::new();
    let mut greens: BTreeMap<u64, f64> = BTreeMap::new();
    for cell in grid {
        let a = cell.level().map_err(ExperimentError::Task)?;
        let n = cell.mass_scale;
        let model = match WalkModel::new(n) {
            Ok(m) => m,
            Err(e) => {
                skipped.push((cell.clone(), e.to_string()));
                continue;
            }
        };
        let g = *greens.entry(n).or_insert_with(|| TorusGreen::new(&model, (side_factor * n as usize).max(8)).at([0, 0], [0, 0]));
        match CorrelationScale::from_green(a, n, g) {
            Ok(c) => cells.push(c),
            Err(e) => skipped.push((cell.clone(), e.to_string())),
        }
    }
    // Levels per mass scale: every requested ā at N, and 0 at round(ξ).
    let mut levels: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for c in &cells {
        levels.entry(c.mass_scale).or_default().push(c.abar.abs());
        levels.entry(c.xi_rounded()).or_default().push(0.0);
    }
    for l in levels.values_mut() {
        l.sort_by(f64::total_cmp);
        l.dedup();
    }
    let runs: Vec<(u64, Vec<ThetaEstimate>)> = levels
        .into_iter()
        .map(|(n, lv)| {
            let config = LevelSetConfig::new(0.0, n, side_factor, samples, rng::derive(seed, n)).map_err(task_err)?;
            Ok((n, estimate_theta_levels(&config, &lv).map_err(task_err)?))
        })
        .collect::<Result<_, ExperimentError>>()?;
    let lookup = |n: u64, level: f64| -> &ThetaEstimate {
        let (_, ests) = runs.iter().find(|(m, _)| *m == n).expect("run exists");
        ests.iter().find(|e| e.level_abar == level).expect("level exists")
    };
    let rows = cells
        .iter()
        .map(|c| {
            let top = lookup(c.mass_scale, c.abar.abs());
            let bottom = lookup(c.xi_rounded(), 0.0);
            let log_n_over_xi = (c.mass_scale as f64 / c.xi).ln();
            ScalingRow {
                a: c.a,
                mass_scale: c.mass_scale,
                g_n: c.g_n,
                xi: c.xi,
                xi_rounded: c.xi_rounded(),
                abar: c.abar,
                theta_abar_n: top.p_hat,
                theta_abar_n_se: top.stderr,
                theta_0_xi: bottom.p_hat,
                theta_0_xi_se: bottom.stderr,
                log_ratio: (top.p_hat / bottom.p_hat).ln(),
                log_ratio_se: ((top.stderr / top.p_hat).powi(2) + (bottom.stderr / bottom.p_hat).powi(2)).sqrt(),
                log_n_over_xi,
                minus_tau_log_n_over_xi: -tau * log_n_over_xi,
            }
        })
        .collect();
    Ok(ScalingTable { rows, skipped, tau, samples, side_factor })
}

fn run_scaling(p: &ScalingParams, seed: u64, base: &Path, name: &str) -> Result<TaskOutput, ExperimentError> {
    let grid = match &p.grid_file {
        Some(f) => parse_grid_config(&read_text(&base.join(f))?)?,
        None => p.grid.clone(),
    };
    let tau = p.tau.unwrap_or_else(segment::tau_reference);
    let table = scaling_experiment(&grid, p.samples, p.side_factor, tau, seed)?;
    let mut out = TaskOutput::default();
    out.metric("rows", table.rows.len() as f64);
    out.metric("skipped", table.skipped.len() as f64);
    if let Some(worst) = table.rows.iter().map(|r| r.log_ratio).filter(|v| v.is_finite()).reduce(f64::max) {
        out.metric("max_log_ratio", worst);
    }
    out.files.push(("-scaling.csv".into(), csv_bytes(&table.rows)?));
    out.files.push(("-plot.gp".into(), scaling_plot_script(&format!("{name}-scaling.csv")).into_bytes()));
    out.record = serde_json::to_value(&table).map_err(task_err)?;
    Ok(out)
}

fn run_interlace(p: &InterlaceParams, seed: u64) -> Result<TaskOutput, ExperimentError> {
    let model = WalkModel::new(p.mass_scale).map_err(task_err)?;
    let window = window_for(p.window_kind, p.side)?;
    let space = InterlacementSpace::whole_window(&model, &window).map_err(task_err)?;
    let origin_cap = equilibrium_measure(&model, &window, &[[0, 0]], &[]).map_err(task_err)?.cap;
    let lambda = p.locuniq.as_ref().map(|l| l.lambda.unwrap_or_else(|| interlacements::loc_uniq_lambda(p.mass_scale, l.radius, 4.0)));
    let per_sample: Vec<(f64, bool, Option<bool>)> = (0..p.samples)
        .into_par_iter()
        .map(|k| {
            let s = space.sample(p.u, seed, k).map_err(task_err)?;
            let lu = match (&p.locuniq, lambda) {
                (Some(l), Some(lam)) => Some(interlacements::loc_uniq(&s, l.x, l.radius, lam).map_err(task_err)?),
                _ => None,
            };
            Ok((s.trajectories.len() as f64, !s.hits(&[[0, 0]]), lu))
        })
        .collect::<Result<_, ExperimentError>>()?;
    let counts: Vec<f64> = per_sample.iter().map(|s| s.0).collect();
    let (count_mean, count_se) = stats::mean_stderr(&counts);
    let expected = p.u * space.capacity();
    let vacant = per_sample.iter().filter(|s| s.1).count() as u64;
    let (vac, vac_se) = stats::proportion(vacant, p.samples);
    let vac_expected = (-p.u * origin_cap).exp();
    let mut out = TaskOutput::default();
    out.metric("count_mean", count_mean);
    out.metric("count_z", (count_mean - expected) / count_se);
    out.metric("origin_vacancy", vac);
    out.metric("origin_vacancy_z", (vac - vac_expected) / vac_se);
    let mut record = json!({"N": p.mass_scale, "u": p.u, "window": window, "samples": p.samples,
        "capacity": space.capacity(), "count_mean": count_mean, "count_stderr": count_se, "count_expected": expected,
        "origin_capacity": origin_cap, "origin_vacancy": vac, "origin_vacancy_stderr": vac_se,
        "origin_vacancy_expected": vac_expected});
    if let (Some(l), Some(lam)) = (&p.locuniq, lambda) {
        let hits = per_sample.iter().filter(|s| s.2 == Some(true)).count() as u64;
        let (f, se) = stats::proportion(hits, p.samples);
        out.metric("locuniq_fraction", f);
        record["locuniq"] = json!({"x": l.x, "R": l.radius, "lambda": lam, "fraction": f, "stderr": se});
    }
    if let Some(a) = p.isom {
        let ks = interlacements::isomorphism_marginal_test(&model, &window, a, p.samples, rng::derive(seed, 2)).map_err(task_err)?;
        out.metric("isom_ks_statistic", ks.statistic);
        out.metric("isom_ks_passed", if ks.passed { 1.0 } else { 0.0 });
        record["isomorphism"] = json!({"a": a, "ks": ks});
    }
    out.record = record;
    Ok(out)
}

fn run_coarsegrain(p: &CoarsegrainParams, seed: u64, base: &Path) -> Result<TaskOutput, ExperimentError> {
    let path = match (&p.path_file, &p.generate) {
        (Some(f), _) => io::parse_path(&read_text(&base.join(f))?).map_err(task_err)?,
        (None, Some(g)) => {
            let reach = p.mass_scale as f64;
            match g.kind {
                PathKind::Straight => paths::straight(p.x, reach, g.angle, p.l),
                PathKind::Spiral => paths::spiral(p.x, reach, g.turns, g.angle, p.l),
                PathKind::Bridges => paths::random_bridges(p.x, reach, p.l, seed, g.index),
            }
        }
        (None, None) => return Err(ExperimentError::Task("no path given".into())),
    };
    let scales = coarse_grain_scales(p)?;
    let result = coarse_grain::coarse_grain_path(&path, p.x, p.mass_scale, &scales, p.exclusion).map_err(task_err)?;
    let mut out = TaskOutput::default();
    out.metric("blocks", result.blocks as f64);
    out.metric("size", result.collection.len() as f64);
    out.metric("size_over_n", result.collection.len() as f64 / result.n);
    let mut record = json!({"result": result, "path_length": path.len(),
        "entropy_scale": coarse_grain::entropy_scale(result.n, p.m), "growth_ratios": scales.growth_ratios()});
    if p.verify {
        let checks = coarse_grain::verify_result(&result, &path);
        let violations: usize = checks.iter().map(|c| c.violations.len()).sum();
        out.metric("violations", violations as f64);
        record["checks"] = serde_json::to_value(&checks).map_err(task_err)?;
    }
    out.record = record;
    Ok(out)
}

/// Automatic scales from `R = ML·log(N/(ML))`, unless depth and radius are given.
pub fn coarse_grain_scales(p: &CoarsegrainParams) -> Result<CoarseGrainScales, ExperimentError> {
    match (p.depth, p.radius) {
        (Some(k), Some(r)) => coarse_grain::scales_with(p.l, p.m, k, r).map_err(task_err),
        _ => {
            let lm = (p.l * p.m) as f64;
            let n = p.mass_scale as f64 / lm;
            coarse_grain::make_scales(p.l, p.m, lm * n.ln()).map_err(task_err)
        }
    }
}

fn plot_script(csv: &str, x: &str, y: &str, title: &str) -> String {
    format!(
        "# gnuplot -p <this file>\nset datafile separator ','\nset key autotitle columnhead\nset title '{title}'\nset xlabel '{x}'\nset ylabel '{y}'\nplot '{csv}' using '{x}':'{y}' with linespoints\n"
    )
}

fn scaling_plot_script(csv: &str) -> String {
    format!("# gnuplot -p <this file>\n\
     set datafile separator ','\n\
     set key autotitle columnhead\n\
     set xlabel 'log(N/xi)'\n\
     set ylabel 'log theta(abar,N) - log theta(0,xi)'\n\
     plot '{csv}' using 'log_n_over_xi':'log_ratio':'log_ratio_se' with yerrorbars title 'measured', \\\n\
     \x20    '' using 'log_n_over_xi':'minus_tau_log_n_over_xi' with lines title '-tau log(N/xi)'\n")
}

/// Runs one experiment in memory.
pub fn run_experiment(experiment: &Experiment, name: &str, seed: u64, base: &Path) -> Result<TaskOutput, ExperimentError> {
    match experiment {
        Experiment::Segcap(p) => run_segcap(p, name),
        Experiment::Green(p) => run_green(p, base, name),
        Experiment::Capacity(p) => run_capacity(p, base),
        Experiment::Tube(p) => run_tube(p),
        Experiment::Sample(p) => run_sample(p, seed, name),
        Experiment::Theta(p) => run_theta(p, seed),
        Experiment::Scaling(p) => run_scaling(p, seed, base, name),
        Experiment::Interlace(p) => run_interlace(p, seed),
        Experiment::Coarsegrain(p) => run_coarsegrain(p, seed, base),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub metric: String,
    pub value: Option<f64>,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskStatus {
    pub name: String,
    pub kind: String,
    pub seed: u64,
    pub ok: bool,
    pub error: Option<String>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<CheckOutcome>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Value,
    pub base_dir: String,
    pub seed: u64,
    pub versions: BTreeMap<String, String>,
    pub wall_seconds: f64,
    pub tasks: Vec<TaskStatus>,
    pub outputs: Vec<OutputFile>,
}

impl RunManifest {
    pub fn checks_failed(&self) -> usize {
        self.tasks.iter().flat_map(|t| &t.checks).filter(|c| !c.passed).count()
    }

    pub fn tasks_failed(&self) -> usize {
        self.tasks.iter().filter(|t| !t.ok).count()
    }

    /// Whether the process should exit with success.
    pub fn success(&self) -> bool {
        self.checks_failed() == 0 && self.tasks_failed() == 0
    }
}

fn evaluate(expect: &[Expectation], metrics: &BTreeMap<String, f64>) -> Vec<CheckOutcome> {
    expect
        .iter()
        .map(|e| {
            let value = metrics.get(&e.metric).copied();
            let passed = value.is_some_and(|v| e.min.is_none_or(|m| v >= m) && e.max.is_none_or(|m| v <= m));
            CheckOutcome { metric: e.metric.clone(), value, min: e.min, max: e.max, passed }
        })
        .collect()
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<OutputFile, ExperimentError> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|source| ExperimentError::Io { path, source })?;
    Ok(OutputFile { path: name.into(), sha256: hex::encode(Sha256::digest(bytes)) })
}

/// Runs every task (in parallel), writes outputs and `manifest.json` to `out_dir`.
pub fn run(config: &RunConfig, out_dir: &Path, command: &str) -> Result<RunManifest, ExperimentError> {
    let start = Instant::now();
    std::fs::create_dir_all(out_dir).map_err(|source| ExperimentError::Io { path: out_dir.into(), source })?;
    let results: Vec<(Result<TaskOutput, ExperimentError>, f64)> = config
        .tasks
        .par_iter()
        .map(|t| {
            let t0 = Instant::now();
            let r = run_experiment(&t.experiment, &t.name, t.seed, &config.base_dir);
            (r, t0.elapsed().as_secs_f64())
        })
        .collect();
    let mut tasks = Vec::new();
    let mut outputs = Vec::new();
    for (task, (result, wall_seconds)) in config.tasks.iter().zip(results) {
        let (ok, error, metrics) = match result {
            Ok(out) => {
                let record = serde_json::to_vec_pretty(&out.record).map_err(task_err)?;
                outputs.push(write_file(out_dir, &format!("{}.json", task.name), &record)?);
                for (suffix, bytes) in &out.files {
                    outputs.push(write_file(out_dir, &format!("{}{suffix}", task.name), bytes)?);
                }
                (true, None, out.metrics)
            }
            Err(e) => (false, Some(e.to_string()), BTreeMap::new()),
        };
        let mut checks = evaluate(&task.expect, &metrics);
        if !ok {
            checks.iter_mut().for_each(|c| c.passed = false);
        }
        tasks.push(TaskStatus {
            name: task.name.clone(),
            kind: task.experiment.kind().into(),
            seed: task.seed,
            ok,
            error,
            metrics,
            checks,
            wall_seconds,
        });
    }
    let manifest = RunManifest {
        command: command.into(),
        config: config.document.clone(),
        base_dir: config.base_dir.to_string_lossy().into_owned(),
        seed: config.seed,
        versions: BTreeMap::from([("gff2dlab".to_string(), env!("CARGO_PKG_VERSION").to_string())]),
        wall_seconds: start.elapsed().as_secs_f64(),
        tasks,
        outputs,
    };
    let text = serde_json::to_vec_pretty(&manifest).map_err(task_err)?;
    write_file(out_dir, "manifest.json", &text)?;
    Ok(manifest)
}
