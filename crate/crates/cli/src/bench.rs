use std::path::PathBuf;

use clap::Args;
use globustvp::eval::{evaluate, EvalRow};
use globustvp::io::LineSet;
use globustvp::synth::{generate_scene, SceneConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::{csv_text, emit, run_method, CliResult, Failure, Method, SolverArgs};

#[derive(Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    trials: usize,
    /// `name=start:end:step`; name is one of outlier-ratio, sigma, n-lines,
    /// c, sample-size, rounds, focal.
    #[arg(long)]
    sweep: Option<String>,
    #[arg(long, default_value_t = 60)]
    n_lines: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_ratio: f64,
    #[arg(long, default_value_t = 800.0)]
    focal: f64,
    /// Trial `t` uses seed `seed + t` for both scene and solver.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "globustvp,ransac")]
    methods: Vec<Method>,
    #[command(flatten)]
    solver: SolverArgs,
    /// Per-trial CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quartiles per sweep value, method and metric.
    #[arg(long)]
    plot_data: Option<PathBuf>,
    /// Fill runtime_ms (makes output run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Param {
    OutlierRatio,
    Sigma,
    NLines,
    C,
    SampleSize,
    Rounds,
    Focal,
}

impl Param {
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "outlier-ratio" => Param::OutlierRatio,
            "sigma" => Param::Sigma,
            "n-lines" => Param::NLines,
            "c" => Param::C,
            "sample-size" => Param::SampleSize,
            "rounds" => Param::Rounds,
            "focal" => Param::Focal,
            _ => return None,
        })
    }
}

struct Sweep {
    name: String,
    param: Option<Param>,
    values: Vec<f64>,
}

fn parse_sweep(spec: Option<&str>) -> CliResult<Sweep> {
    let Some(spec) = spec else {
        return Ok(Sweep {
            name: String::new(),
            param: None,
            values: vec![f64::NAN],
        });
    };
    let bad = |why: &str| Failure::input(format!("--sweep {spec:?}: {why}"));
    let (name, range) = spec.split_once('=').ok_or_else(|| bad("expected name=start:end:step"))?;
    let param = Param::parse(name).ok_or_else(|| bad("unknown parameter"))?;
    let parts: Vec<f64> = range
        .split(':')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad("range values must be numbers"))?;
    let values = match parts.as_slice() {
        [v] => vec![*v],
        [start, end, step] if *step > 0.0 && end >= start => {
            let n = ((end - start) / step + 1e-9).floor() as usize;
            (0..=n)
                .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
                .collect()
        }
        _ => return Err(bad("expected start:end:step with step > 0 and end >= start")),
    };
    Ok(Sweep {
        name: name.to_string(),
        param: Some(param),
        values,
    })
}

struct Trial {
    value: f64,
    index: usize,
    method: Method,
}

fn configure(args: &BenchArgs, param: Option<Param>, value: f64, trial: usize) -> (SceneConfig, SolverArgs) {
    let mut scene = SceneConfig {
        n_lines: args.n_lines,
        noise_sigma_px: args.sigma,
        outlier_ratio: args.outlier_ratio,
        focal: args.focal,
        seed: args.seed + trial as u64,
        ..SceneConfig::default()
    };
    let mut solver = args.solver.clone();
    match param {
        Some(Param::OutlierRatio) => scene.outlier_ratio = value,
        Some(Param::Sigma) => scene.noise_sigma_px = value,
        Some(Param::NLines) => scene.n_lines = value as usize,
        Some(Param::Focal) => scene.focal = value,
        Some(Param::C) => solver.c = value,
        Some(Param::SampleSize) => solver.sample_size = value as usize,
        Some(Param::Rounds) => solver.rounds = value as usize,
        None => {}
    }
    (scene, solver)
}

fn run_trial(args: &BenchArgs, sweep: &Sweep, t: &Trial) -> CliResult<EvalRow> {
    let (scene_cfg, solver) = configure(args, sweep.param, t.value, t.index);
    let scene = generate_scene(&scene_cfg)?;
    let scene_id = match sweep.param {
        Some(_) => format!("{}={}/{}", sweep.name, t.value, t.index),
        None => t.index.to_string(),
    };
    let set = LineSet {
        intrinsics: scene.intrinsics,
        lines: scene.lines,
        frame_gt: Some(scene.frame_gt),
    };
    let seed = scene_cfg.seed;
    let row = match run_method(t.method, &set, &solver, seed) {
        Ok((res, ms)) => evaluate(
            &scene_id,
            t.method.name(),
            &res.frame()?,
            &res.labels(),
            &set.lines,
            &set.intrinsics,
            set.frame_gt.as_ref(),
            args.timing.then_some(ms),
        ),
        Err(globustvp::Error::NumericalFailure(m)) => {
            return Err(globustvp::Error::NumericalFailure(m).into())
        }
        // A method that returns no frame scores zero rather than aborting the sweep.
        Err(_) => EvalRow {
            scene_id,
            method: t.method.name().to_string(),
            precision: None,
            recall: Some(0.0),
            f1: Some(0.0),
            consistency_px: None,
            aa3: 0.0,
            aa5: 0.0,
            aa10: 0.0,
            runtime_ms: None,
        },
    };
    Ok(row)
}

#[derive(Serialize)]
struct Aggregate<'a> {
    param: &'a str,
    value: Option<f64>,
    method: &'a str,
    metric: &'a str,
    count: usize,
    q1: Option<f64>,
    median: Option<f64>,
    q3: Option<f64>,
}

/// Linearly interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

const METRICS: [&str; 8] = ["precision", "recall", "f1", "consistency_px", "aa3", "aa5", "aa10", "runtime_ms"];

fn metric(row: &EvalRow, name: &str) -> Option<f64> {
    match name {
        "precision" => row.precision,
        "recall" => row.recall,
        "f1" => row.f1,
        "consistency_px" => row.consistency_px,
        "aa3" => Some(row.aa3),
        "aa5" => Some(row.aa5),
        "aa10" => Some(row.aa10),
        "runtime_ms" => row.runtime_ms,
        _ => None,
    }
    .filter(|v| v.is_finite())
}

fn thread_count() -> Option<usize> {
    std::env::var("VP_NUM_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
}

pub fn run(args: &BenchArgs) -> CliResult<()> {
    let sweep = parse_sweep(args.sweep.as_deref())?;
    if args.trials == 0 {
        return Err(Failure::input("--trials must be positive"));
    }
    if args.methods.is_empty() {
        return Err(Failure::input("--methods must name at least one method"));
    }
    let mut trials = Vec::new();
    for &value in &sweep.values {
        for index in 0..args.trials {
            for &method in &args.methods {
                trials.push(Trial { value, index, method });
            }
        }
    }

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count() {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(Failure::input)?;
    let rows: Vec<EvalRow> = pool.install(|| {
        trials
            .par_iter()
            .map(|t| run_trial(args, &sweep, t))
            .collect::<CliResult<Vec<_>>>()
    })?;
    emit(args.out.as_deref(), &csv_text(&rows)?)?;

    if let Some(path) = &args.plot_data {
        let per_value = args.trials * args.methods.len();
        let mut aggregates = Vec::new();
        for (vi, &value) in sweep.values.iter().enumerate() {
            let chunk = &rows[vi * per_value..(vi + 1) * per_value];
            for &method in &args.methods {
                for name in METRICS {
                    let mut xs: Vec<f64> = chunk
                        .iter()
                        .filter(|r| r.method == method.name())
                        .filter_map(|r| metric(r, name))
                        .collect();
                    xs.sort_by(f64::total_cmp);
                    aggregates.push(Aggregate {
                        param: &sweep.name,
                        value: value.is_finite().then_some(value),
                        method: method.name(),
                        metric: name,
                        count: xs.len(),
                        q1: quantile(&xs, 0.25),
                        median: quantile(&xs, 0.5),
                        q3: quantile(&xs, 0.75),
                    });
                }
            }
        }
        emit(Some(path), &csv_text(&aggregates)?)?;
    }
    Ok(())
}
