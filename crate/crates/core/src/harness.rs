//! Hyperparameter sweeps: config parsing, the run grid, CSV results and
//! per-complexity summaries.
//!
//! Config documents are flat `key = value` entries separated by newlines or
//! commas. Lists are written `[a, b, c]`; `#` starts a comment.
//!
//! ```text
//! benchmark = heat
//! complexity = [4, 16, 64]
//! depth = [2, 4]
//! seeds = [0, 1, 2]
//! ```
//!
//! | key | values | default |
//! |-----|--------|---------|
//! | `benchmark` | `shm`, `heat` | required |
//! | `complexity` | SHM: `T/π` multipliers; heat: grid sizes `N ≥ 3` | required |
//! | `depth` | subset of `{2, 4, 8}` | all |
//! | `width` | subset of `{64, 128}` | all |
//! | `lr` | positive reals | `[1e-3, 1e-4]` |
//! | `arch` | `mlp`, `resnet` | both |
//! | `formulation` | `uniform`, `adaptive` | both |
//! | `iterations` | positive integer | 10241 |
//! | `seed` / `seeds` | non-negative integers | `0` |
//! | `D` | training points, at least 2 | SHM `256·T/π`, heat 1024 |
//! | `residual_reduction` | `mean`, `sum` | `mean` |
//! | `norm_scaling` | `ic`, `residual` | `ic` |
//! | `rtol`, `atol` | reference solver tolerances | `1e-8`, `1e-10` |
//! | `probes` | Hutchinson probes per trace, `0` skips traces | 64 |
//! | `output` | CSV path | `$PINN_OUTPUT_DIR/sweep-<benchmark>.csv` |

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{component_traces, error_report, laplacian_normalizers, DEFAULT_PROBES};
use crate::error::{Error, Result};
use crate::network::{Arch, NetworkConfig};
use crate::ode::{make_heat, make_shm, Benchmark, HeatParams, NormScaling, OdeSystem};
use crate::reference::{
    reference_trajectory, ReferenceMethod, Trajectory, DEFAULT_ATOL, DEFAULT_RTOL,
};
use crate::training::{train, Formulation, ResidualReduction, TrainingConfig, DEFAULT_ITERATIONS};

/// Environment variable naming the default directory for sweep output.
pub const OUTPUT_DIR_ENV: &str = "PINN_OUTPUT_DIR";

pub const ALLOWED_DEPTHS: [usize; 3] = [2, 4, 8];
pub const ALLOWED_WIDTHS: [usize; 2] = [64, 128];
pub const DEFAULT_LEARNING_RATES: [f64; 2] = [1e-3, 1e-4];
/// Training points per unit of `T/π` on the SHM benchmark.
pub const SHM_POINTS_PER_PI: f64 = 256.0;
pub const HEAT_POINTS: usize = 1024;

const KEYS: &[&str] = &[
    "benchmark",
    "complexity",
    "depth",
    "width",
    "lr",
    "arch",
    "formulation",
    "iterations",
    "seed",
    "seeds",
    "D",
    "residual_reduction",
    "norm_scaling",
    "rtol",
    "atol",
    "probes",
    "output",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub benchmark: Benchmark,
    pub complexity_values: Vec<f64>,
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub archs: Vec<Arch>,
    pub formulations: Vec<Formulation>,
    pub seeds: Vec<u64>,
    pub iterations: usize,
    /// Overrides the per-benchmark default number of training points.
    pub n_points: Option<usize>,
    pub residual_reduction: ResidualReduction,
    pub norm_scaling: NormScaling,
    pub rtol: f64,
    pub atol: f64,
    pub probes: usize,
    pub output_path: Option<PathBuf>,
}

impl SweepSpec {
    /// Full default grid for one benchmark.
    pub fn new(benchmark: Benchmark, complexity_values: Vec<f64>) -> Self {
        Self {
            benchmark,
            complexity_values,
            depths: ALLOWED_DEPTHS.to_vec(),
            widths: ALLOWED_WIDTHS.to_vec(),
            learning_rates: DEFAULT_LEARNING_RATES.to_vec(),
            archs: vec![Arch::Mlp, Arch::ResNet],
            formulations: vec![Formulation::Uniform, Formulation::Adaptive],
            seeds: vec![0],
            iterations: DEFAULT_ITERATIONS,
            n_points: None,
            residual_reduction: ResidualReduction::Mean,
            norm_scaling: NormScaling::InitialCondition,
            rtol: DEFAULT_RTOL,
            atol: DEFAULT_ATOL,
            probes: DEFAULT_PROBES,
            output_path: None,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.depths.len()
            * self.widths.len()
            * self.learning_rates.len()
            * self.archs.len()
            * self.formulations.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.complexity_values.is_empty() {
            return Err(Error::Config("no complexity values".into()));
        }
        for &c in &self.complexity_values {
            self.system(c)?;
            self.points_for(c)?;
        }
        if self.grid_size() == 0 {
            return Err(Error::Config("empty hyperparameter grid".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("no seeds".into()));
        }
        if let Some(&d) = self.depths.iter().find(|d| !ALLOWED_DEPTHS.contains(d)) {
            return Err(Error::Config(format!(
                "depth {d} not in {ALLOWED_DEPTHS:?}"
            )));
        }
        if let Some(&w) = self.widths.iter().find(|w| !ALLOWED_WIDTHS.contains(w)) {
            return Err(Error::Config(format!(
                "width {w} not in {ALLOWED_WIDTHS:?}"
            )));
        }
        if let Some(&lr) = self
            .learning_rates
            .iter()
            .find(|&&lr| !(lr > 0.0 && lr.is_finite()))
        {
            return Err(Error::Config(format!(
                "learning rate {lr} must be positive"
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be positive".into()));
        }
        for (name, v) in [("rtol", self.rtol), ("atol", self.atol)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// The ODE system at one complexity value.
    pub fn system(&self, complexity: f64) -> Result<OdeSystem> {
        match self.benchmark {
            Benchmark::Shm => {
                if !(complexity > 0.0 && complexity.is_finite()) {
                    return Err(Error::Config(format!(
                        "SHM complexity must be a positive multiple of π, got {complexity}"
                    )));
                }
                make_shm(1.0, complexity * std::f64::consts::PI)
            }
            Benchmark::Heat => {
                let n = heat_grid_size(complexity)?;
                Ok(make_heat(n, HeatParams::HORIZON)?.with_norm_scaling(self.norm_scaling))
            }
        }
    }

    pub fn points_for(&self, complexity: f64) -> Result<usize> {
        let d = match (self.n_points, self.benchmark) {
            (Some(d), _) => d,
            (None, Benchmark::Heat) => HEAT_POINTS,
            (None, Benchmark::Shm) => (SHM_POINTS_PER_PI * complexity).round() as usize,
        };
        if d < 2 {
            return Err(Error::Config(format!(
                "complexity {complexity} gives D = {d}; need at least 2 training points"
            )));
        }
        Ok(d)
    }

    /// Every run of the sweep, in output order.
    pub fn runs(&self) -> Result<Vec<RunSpec>> {
        self.validate()?;
        let mut runs = Vec::new();
        for &complexity in &self.complexity_values {
            let system = self.system(complexity)?;
            let n_points = self.points_for(complexity)?;
            for &seed in &self.seeds {
                for &depth in &self.depths {
                    for &width in &self.widths {
                        for &lr in &self.learning_rates {
                            for &arch in &self.archs {
                                for &formulation in &self.formulations {
                                    let network =
                                        NetworkConfig::new(depth, width, arch, system.dim())?;
                                    let mut training =
                                        TrainingConfig::new(network, system.clone(), n_points, lr);
                                    training.formulation = formulation;
                                    training.iterations = self.iterations;
                                    training.seed = seed;
                                    training.residual_reduction = self.residual_reduction;
                                    runs.push(RunSpec {
                                        benchmark: self.benchmark,
                                        complexity,
                                        training,
                                        probes: self.probes,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok(runs)
    }

    /// `output` from the document, else `$PINN_OUTPUT_DIR/sweep-<benchmark>.csv`.
    pub fn resolved_output(&self) -> PathBuf {
        self.output_path
            .clone()
            .unwrap_or_else(|| default_output_dir().join(format!("sweep-{}.csv", self.benchmark)))
    }
}

fn heat_grid_size(complexity: f64) -> Result<usize> {
    if complexity.fract() != 0.0 || complexity < 3.0 || !complexity.is_finite() {
        return Err(Error::Config(format!(
            "heat complexity must be an integer grid size N ≥ 3, got {complexity}"
        )));
    }
    Ok(complexity as usize)
}

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("."))
}

struct Entry {
    line: usize,
    key: String,
    value: String,
}

fn parse_error(entry: &Entry, message: impl Into<String>) -> Error {
    Error::Parse {
        line: entry.line,
        key: entry.key.clone(),
        message: message.into(),
    }
}

/// Splits a document into entries at newlines and top-level commas.
fn split_entries(text: &str) -> Result<Vec<Entry>> {
    let mut entries = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    let mut start_line = 1;
    let mut line = 1;

    let flush = |raw: &mut String, at: usize, entries: &mut Vec<Entry>| -> Result<()> {
        let s = raw.trim();
        if !s.is_empty() {
            let (key, value) = s.split_once('=').ok_or_else(|| Error::Parse {
                line: at,
                key: s.to_string(),
                message: "expected `key = value`".into(),
            })?;
            entries.push(Entry {
                line: at,
                key: key.trim().to_string(),
                value: value.trim().to_string(),
            });
        }
        raw.clear();
        Ok(())
    };

    for raw_line in text.lines() {
        let content = raw_line.split('#').next().unwrap_or("");
        for ch in content.chars() {
            match ch {
                '[' => {
                    depth += 1;
                    current.push(ch);
                }
                ']' => {
                    depth = depth.saturating_sub(1);
                    current.push(ch);
                }
                ',' if depth == 0 => {
                    flush(&mut current, start_line, &mut entries)?;
                    start_line = line;
                }
                _ => {
                    if current.trim().is_empty() {
                        start_line = line;
                    }
                    current.push(ch);
                }
            }
        }
        if depth == 0 {
            flush(&mut current, start_line, &mut entries)?;
        } else {
            current.push(' ');
        }
        line += 1;
    }
    if depth != 0 {
        return Err(Error::Parse {
            line: start_line,
            key: current.split('=').next().unwrap_or("").trim().to_string(),
            message: "unterminated list".into(),
        });
    }
    flush(&mut current, start_line, &mut entries)?;
    Ok(entries)
}

fn list_items(entry: &Entry) -> Result<Vec<&str>> {
    let v = entry.value.as_str();
    let inner = match (v.strip_prefix('['), v.ends_with(']')) {
        (Some(rest), true) => &rest[..rest.len() - 1],
        (None, false) => v,
        _ => return Err(parse_error(entry, "unbalanced brackets")),
    };
    let items: Vec<&str> = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(parse_error(entry, "empty value"));
    }
    Ok(items)
}

fn parse_list<T: FromStr>(entry: &Entry) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    list_items(entry)?
        .into_iter()
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| parse_error(entry, format!("invalid value `{s}`: {e}")))
        })
        .collect()
}

fn parse_scalar<T: FromStr>(entry: &Entry) -> Result<T>
where
    T::Err: fmt::Display,
{
    let mut items = parse_list::<T>(entry)?;
    if items.len() != 1 {
        return Err(parse_error(entry, "expected a single value"));
    }
    Ok(items.remove(0))
}

fn check_allowed<T: PartialEq + fmt::Debug>(
    entry: &Entry,
    values: &[T],
    allowed: &[T],
) -> Result<()> {
    match values.iter().find(|v| !allowed.contains(v)) {
        Some(v) => Err(parse_error(
            entry,
            format!("value {v:?} not allowed (allowed {allowed:?})"),
        )),
        None => Ok(()),
    }
}

fn positive(entry: &Entry, values: &[f64]) -> Result<()> {
    match values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        Some(v) => Err(parse_error(entry, format!("value {v} must be positive"))),
        None => Ok(()),
    }
}

/// Parses a sweep document, filling defaults for omitted keys.
pub fn parse_config(text: &str) -> Result<SweepSpec> {
    let entries = split_entries(text)?;
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for e in &entries {
        let Some(&key) = KEYS.iter().find(|k| **k == e.key) else {
            return Err(parse_error(e, "unknown key"));
        };
        let canonical = if key == "seeds" { "seed" } else { key };
        if let Some(first) = seen.insert(canonical, e.line) {
            return Err(parse_error(
                e,
                format!("duplicate key (first set on line {first})"),
            ));
        }
    }
    let find = |key: &str| entries.iter().find(|e| e.key == key);

    let benchmark_entry = find("benchmark").ok_or_else(|| Error::Parse {
        line: 0,
        key: "benchmark".into(),
        message: "missing required key".into(),
    })?;
    let benchmark: Benchmark = parse_scalar(benchmark_entry)?;
    let complexity_entry = find("complexity").ok_or_else(|| Error::Parse {
        line: 0,
        key: "complexity".into(),
        message: "missing required key".into(),
    })?;
    let complexity_values: Vec<f64> = parse_list(complexity_entry)?;

    let mut spec = SweepSpec::new(benchmark, complexity_values);
    for &c in &spec.complexity_values {
        spec.system(c)
            .and_then(|_| spec.points_for(c))
            .map_err(|e| parse_error(complexity_entry, e.to_string()))?;
    }

    for e in &entries {
        match e.key.as_str() {
            "benchmark" | "complexity" => {}
            "depth" => {
                spec.depths = parse_list(e)?;
                check_allowed(e, &spec.depths, &ALLOWED_DEPTHS)?;
            }
            "width" => {
                spec.widths = parse_list(e)?;
                check_allowed(e, &spec.widths, &ALLOWED_WIDTHS)?;
            }
            "lr" => {
                spec.learning_rates = parse_list(e)?;
                positive(e, &spec.learning_rates)?;
            }
            "arch" => spec.archs = parse_list(e)?,
            "formulation" => spec.formulations = parse_list(e)?,
            "iterations" => {
                spec.iterations = parse_scalar(e)?;
                if spec.iterations == 0 {
                    return Err(parse_error(e, "must be positive"));
                }
            }
            "seed" | "seeds" => spec.seeds = parse_list(e)?,
            "D" => {
                let d: usize = parse_scalar(e)?;
                if d < 2 {
                    return Err(parse_error(e, "need at least 2 training points"));
                }
                spec.n_points = Some(d);
            }
            "residual_reduction" => spec.residual_reduction = parse_scalar(e)?,
            "norm_scaling" => spec.norm_scaling = parse_scalar(e)?,
            "rtol" => {
                spec.rtol = parse_scalar(e)?;
                positive(e, &[spec.rtol])?;
            }
            "atol" => {
                spec.atol = parse_scalar(e)?;
                positive(e, &[spec.atol])?;
            }
            "probes" => spec.probes = parse_scalar(e)?,
            "output" => spec.output_path = Some(PathBuf::from(e.value.trim_matches('"'))),
            _ => unreachable!("keys checked above"),
        }
    }
    spec.validate()?;
    Ok(spec)
}

/// One training run of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub benchmark: Benchmark,
    pub complexity: f64,
    pub training: TrainingConfig,
    /// Hutchinson probes per component trace; `0` skips the traces.
    pub probes: usize,
}

impl RunSpec {
    /// Stable identifier; does not include the seed or the complexity.
    pub fn config_id(&self) -> String {
        let t = &self.training;
        format!(
            "d{}-w{}-{}-lr{:e}-{}",
            t.network.depth, t.network.width, t.network.arch, t.learning_rate, t.formulation
        )
    }
}

/// Columns of the results CSV, in order.
pub const RESULT_COLUMNS: [&str; 26] = [
    "benchmark",
    "complexity",
    "horizon",
    "n_equations",
    "n_points",
    "config_id",
    "depth",
    "width",
    "arch",
    "lr",
    "formulation",
    "residual_reduction",
    "seed",
    "iterations",
    "iterations_completed",
    "diverged",
    "rel_error_eval",
    "rel_error_ic",
    "residual_loss",
    "ic_loss",
    "residual_trace",
    "residual_trace_stderr",
    "ic_trace",
    "ic_trace_stderr",
    "residual_trace_normalized",
    "ic_trace_normalized",
];

/// One row of the results CSV. Metric fields are empty for diverged runs;
/// trace fields are empty when traces were skipped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub benchmark: Benchmark,
    pub complexity: f64,
    pub horizon: f64,
    pub n_equations: usize,
    pub n_points: usize,
    pub config_id: String,
    pub depth: usize,
    pub width: usize,
    pub arch: Arch,
    pub lr: f64,
    pub formulation: Formulation,
    pub residual_reduction: ResidualReduction,
    pub seed: u64,
    pub iterations: usize,
    pub iterations_completed: usize,
    pub diverged: bool,
    pub rel_error_eval: Option<f64>,
    pub rel_error_ic: Option<f64>,
    pub residual_loss: Option<f64>,
    pub ic_loss: Option<f64>,
    pub residual_trace: Option<f64>,
    pub residual_trace_stderr: Option<f64>,
    pub ic_trace: Option<f64>,
    pub ic_trace_stderr: Option<f64>,
    pub residual_trace_normalized: Option<f64>,
    pub ic_trace_normalized: Option<f64>,
}

/// Trains one configuration and measures it against `reference`, sampled at
/// the held-out midpoints. Numerical failures are reported in the row.
pub fn execute_run(run: &RunSpec, reference: &Trajectory) -> Result<ResultRow> {
    let t = &run.training;
    let report = train(t)?;
    let mut row = ResultRow {
        benchmark: run.benchmark,
        complexity: run.complexity,
        horizon: t.system.horizon,
        n_equations: t.system.dim(),
        n_points: t.n_points,
        config_id: run.config_id(),
        depth: t.network.depth,
        width: t.network.width,
        arch: t.network.arch,
        lr: t.learning_rate,
        formulation: t.formulation,
        residual_reduction: t.residual_reduction,
        seed: t.seed,
        iterations: t.iterations,
        iterations_completed: report.iterations_completed,
        diverged: report.diverged(),
        rel_error_eval: None,
        rel_error_ic: None,
        residual_loss: None,
        ic_loss: None,
        residual_trace: None,
        residual_trace_stderr: None,
        ic_trace: None,
        ic_trace_stderr: None,
        residual_trace_normalized: None,
        ic_trace_normalized: None,
    };
    let Some(losses) = report.final_losses else {
        return Ok(row);
    };
    let metrics = error_report(reference, t, &report.final_params).and_then(|errors| {
        let traces = match run.probes {
            0 => None,
            n => Some(component_traces(t, &report.final_params, n, t.seed)?),
        };
        Ok((errors, traces))
    });
    let (errors, traces) = match metrics {
        Ok(m) => m,
        Err(Error::NumericalOverflow { .. }) => {
            row.diverged = true;
            return Ok(row);
        }
        Err(e) => return Err(e),
    };
    let all_finite = [errors.rel_error_eval, errors.rel_error_ic]
        .into_iter()
        .chain(traces.iter().flat_map(|tr| {
            [
                tr.residual.mean,
                tr.residual.stderr,
                tr.initial_condition.mean,
                tr.initial_condition.stderr,
            ]
        }))
        .all(f64::is_finite);
    if !all_finite {
        row.diverged = true;
        return Ok(row);
    }
    row.rel_error_eval = Some(errors.rel_error_eval);
    row.rel_error_ic = Some(errors.rel_error_ic);
    row.residual_loss = Some(losses.residual_loss);
    row.ic_loss = Some(losses.ic_loss);
    if let Some(tr) = traces {
        let (res_div, ic_div) = laplacian_normalizers(&t.system)?;
        row.residual_trace = Some(tr.residual.mean);
        row.residual_trace_stderr = Some(tr.residual.stderr);
        row.ic_trace = Some(tr.initial_condition.mean);
        row.ic_trace_stderr = Some(tr.initial_condition.stderr);
        row.residual_trace_normalized = Some(tr.residual.mean / res_div);
        row.ic_trace_normalized = Some(tr.initial_condition.mean / ic_div);
    }
    Ok(row)
}

/// Rows in grid order plus each run's wall-clock seconds.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub wall_seconds: Vec<f64>,
}

/// Runs every configuration of `spec` on a pool of `workers` threads.
/// Rows come back in grid order whatever the scheduling.
pub fn run_sweep(spec: &SweepSpec, workers: usize) -> Result<SweepOutcome> {
    let runs = spec.runs()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let references: Vec<(f64, Trajectory)> = spec
            .complexity_values
            .par_iter()
            .map(|&c| {
                let system = spec.system(c)?;
                let colloc =
                    crate::training::make_collocation(system.horizon, spec.points_for(c)?)?;
                let traj = reference_trajectory(
                    &system,
                    &colloc.eval_points,
                    ReferenceMethod::Auto,
                    spec.rtol,
                    spec.atol,
                )?;
                Ok((c, traj))
            })
            .collect::<Result<_>>()?;
        let results: Vec<(ResultRow, f64)> = runs
            .par_iter()
            .map(|run| {
                let reference = &references
                    .iter()
                    .find(|(c, _)| *c == run.complexity)
                    .expect("reference for every complexity")
                    .1;
                let start = Instant::now();
                let row = execute_run(run, reference)?;
                Ok((row, start.elapsed().as_secs_f64()))
            })
            .collect::<Result<_>>()?;
        let (rows, wall_seconds) = results.into_iter().unzip();
        Ok(SweepOutcome { rows, wall_seconds })
    })
}

pub fn write_rows<W: Write>(out: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(out);
    w.write_record(RESULT_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows<R: Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_COLUMNS {
        return Err(Error::Config(format!(
            "unexpected CSV header; expected {}",
            RESULT_COLUMNS.join(",")
        )));
    }
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Wall-clock seconds per run, keyed like the results file. Kept apart
/// from the results so those stay byte-reproducible.
pub fn write_timings<W: Write>(out: W, outcome: &SweepOutcome) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["complexity", "seed", "config_id", "wall_seconds"])?;
    for (row, secs) in outcome.rows.iter().zip(&outcome.wall_seconds) {
        w.write_record([
            row.complexity.to_string(),
            row.seed.to_string(),
            row.config_id.clone(),
            format!("{secs:.3}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Path of the timing file written next to `results`.
pub fn timing_path(results: &Path) -> PathBuf {
    let mut name = results.file_stem().unwrap_or_default().to_os_string();
    name.push(".timing.csv");
    results.with_file_name(name)
}

/// Writes results and the timing sidecar, creating parent directories.
pub fn write_outcome(path: &Path, outcome: &SweepOutcome) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_rows(BufWriter::new(File::create(path)?), &outcome.rows)?;
    write_timings(BufWriter::new(File::create(timing_path(path))?), outcome)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub benchmark: Benchmark,
    pub complexity: f64,
    pub runs: usize,
    pub diverged: usize,
    pub median_rel_error: Option<f64>,
    pub min_rel_error: Option<f64>,
    pub median_rel_error_ic: Option<f64>,
    pub best_config_id: Option<String>,
    pub best_seed: Option<u64>,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Per-complexity statistics, ordered by benchmark then complexity.
/// Diverged runs are counted but excluded from the error statistics.
pub fn summarize(rows: &[ResultRow]) -> Result<Vec<SummaryRow>> {
    if rows.is_empty() {
        return Err(Error::EmptyInput("no result rows to summarize".into()));
    }
    let mut groups: Vec<((Benchmark, f64), Vec<&ResultRow>)> = Vec::new();
    for row in rows {
        let key = (row.benchmark, row.complexity);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    groups.sort_by(|a, b| a.0 .0.cmp(&b.0 .0).then(a.0 .1.total_cmp(&b.0 .1)));

    Ok(groups
        .into_iter()
        .map(|((benchmark, complexity), group)| {
            let ok: Vec<&ResultRow> = group
                .iter()
                .copied()
                .filter(|r| !r.diverged && r.rel_error_eval.is_some())
                .collect();
            let mut errors: Vec<f64> = ok.iter().filter_map(|r| r.rel_error_eval).collect();
            let mut ic_errors: Vec<f64> = ok.iter().filter_map(|r| r.rel_error_ic).collect();
            let best = ok.iter().min_by(|a, b| {
                a.rel_error_eval
                    .unwrap()
                    .total_cmp(&b.rel_error_eval.unwrap())
            });
            SummaryRow {
                benchmark,
                complexity,
                runs: group.len(),
                diverged: group.iter().filter(|r| r.diverged).count(),
                median_rel_error: median(&mut errors),
                min_rel_error: errors.first().copied(),
                median_rel_error_ic: median(&mut ic_errors),
                best_config_id: best.map(|r| r.config_id.clone()),
                best_seed: best.map(|r| r.seed),
            }
        })
        .collect())
}

pub fn summarize_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let rows = read_rows(File::open(path)?)?;
    summarize(&rows)
}

pub fn write_summary<W: Write>(out: W, summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in summary {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(complexity: f64, err: Option<f64>, diverged: bool, id: &str) -> ResultRow {
        ResultRow {
            benchmark: Benchmark::Shm,
            complexity,
            horizon: complexity * std::f64::consts::PI,
            n_equations: 2,
            n_points: 256,
            config_id: id.into(),
            depth: 2,
            width: 64,
            arch: Arch::Mlp,
            lr: 1e-3,
            formulation: Formulation::Uniform,
            residual_reduction: ResidualReduction::Mean,
            seed: 0,
            iterations: 10,
            iterations_completed: 10,
            diverged,
            rel_error_eval: err,
            rel_error_ic: err,
            residual_loss: err,
            ic_loss: err,
            residual_trace: None,
            residual_trace_stderr: None,
            ic_trace: None,
            ic_trace_stderr: None,
            residual_trace_normalized: None,
            ic_trace_normalized: None,
        }
    }

    #[test]
    fn minimal_shm_config_fills_defaults() {
        let spec = parse_config("benchmark=shm, complexity=[1]").unwrap();
        assert_eq!(spec.grid_size(), 48);
        assert_eq!(spec.points_for(1.0).unwrap(), 256);
        assert_eq!(spec.iterations, 10_241);
        assert_eq!(spec.seeds, vec![0]);
        let runs = spec.runs().unwrap();
        assert_eq!(runs.len(), 48);
        assert_eq!(runs[0].training.system.horizon, std::f64::consts::PI);
    }

    #[test]
    fn heat_config_defaults() {
        let spec = parse_config("benchmark = heat\ncomplexity = [4, 16]\n").unwrap();
        assert_eq!(spec.points_for(4.0).unwrap(), 1024);
        let sys = spec.system(16.0).unwrap();
        assert_eq!(sys.horizon, 0.1);
        assert_eq!(sys.nu_ic, crate::ode::heat_operator_norm(16));
    }

    #[test]
    fn bad_depth_names_key_and_line() {
        let err = parse_config("benchmark=shm\ncomplexity=[1]\ndepth=[3]").unwrap_err();
        match err {
            Error::Parse { line, key, .. } => {
                assert_eq!(key, "depth");
                assert_eq!(line, 3);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_documents() {
        for doc in [
            "complexity=[1]",
            "benchmark=shm",
            "benchmark=shm, complexity=[1], colour=red",
            "benchmark=shm, complexity=[1], seed=1, seeds=[2]",
            "benchmark=heat, complexity=[2]",
            "benchmark=heat, complexity=[4.5]",
            "benchmark=shm, complexity=[1], lr=[0]",
            "benchmark=shm, complexity=[1], D=1",
            "benchmark=shm, complexity=[1, 2",
            "benchmark=shm, complexity",
            "benchmark=shm, complexity=[1], arch=[cnn]",
        ] {
            assert!(
                matches!(parse_config(doc), Err(Error::Parse { .. })),
                "accepted {doc:?}"
            );
        }
    }

    #[test]
    fn parse_full_document() {
        let doc = "
            # toy sweep
            benchmark = shm
            complexity = [1,
                          2]
            depth = [2, 4], width = 64
            lr = 1e-3
            arch = [mlp]
            formulation = [adaptive]
            iterations = 101
            seeds = [0, 1, 2]
            D = 64
            residual_reduction = sum
            rtol = 1e-6, atol = 1e-9
            probes = 0
            output = \"out/toy.csv\"
        ";
        let spec = parse_config(doc).unwrap();
        assert_eq!(spec.complexity_values, vec![1.0, 2.0]);
        assert_eq!(spec.depths, vec![2, 4]);
        assert_eq!(spec.widths, vec![64]);
        assert_eq!(spec.formulations, vec![Formulation::Adaptive]);
        assert_eq!(spec.seeds, vec![0, 1, 2]);
        assert_eq!(spec.n_points, Some(64));
        assert_eq!(spec.residual_reduction, ResidualReduction::Sum);
        assert_eq!(spec.probes, 0);
        assert_eq!(spec.output_path, Some(PathBuf::from("out/toy.csv")));
        assert_eq!(spec.runs().unwrap().len(), 2 * 3 * 2);
    }

    #[test]
    fn header_matches_row_fields() {
        let mut buf = Vec::new();
        let mut w = csv::Writer::from_writer(&mut buf);
        w.serialize(row(1.0, Some(0.5), false, "a")).unwrap();
        drop(w);
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), RESULT_COLUMNS.join(","));
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let rows = vec![row(1.0, Some(0.25), false, "a"), row(2.0, None, true, "b")];
        let mut buf = Vec::new();
        write_rows(&mut buf, &rows).unwrap();
        assert_eq!(read_rows(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn summary_of_single_row() {
        let s = summarize(&[row(1.0, Some(0.3), false, "a")]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].median_rel_error, Some(0.3));
        assert_eq!(s[0].min_rel_error, Some(0.3));
        assert_eq!(s[0].best_config_id.as_deref(), Some("a"));
    }

    #[test]
    fn summary_excludes_diverged_and_orders_by_complexity() {
        let rows = vec![
            row(4.0, Some(0.9), false, "x"),
            row(1.0, Some(0.2), false, "a"),
            row(1.0, None, true, "b"),
            row(1.0, Some(0.4), false, "c"),
            row(2.0, Some(0.5), false, "y"),
        ];
        let s = summarize(&rows).unwrap();
        let cs: Vec<f64> = s.iter().map(|r| r.complexity).collect();
        assert_eq!(cs, vec![1.0, 2.0, 4.0]);
        assert_eq!(s[0].runs, 3);
        assert_eq!(s[0].diverged, 1);
        assert!((s[0].median_rel_error.unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(s[0].min_rel_error, Some(0.2));
        assert_eq!(s[0].best_config_id.as_deref(), Some("a"));
    }

    #[test]
    fn summary_of_nothing_is_an_error() {
        assert!(matches!(summarize(&[]), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn timing_file_sits_beside_results() {
        assert_eq!(
            timing_path(Path::new("out/sweep.csv")),
            PathBuf::from("out/sweep.timing.csv")
        );
    }
}
