use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use globustvp::eval::{evaluate, ransac_baseline, EvalRow, RansacConfig};
use globustvp::io::{line_set_to_json, parse_line_set, parse_result, LineSet, ResultFile};
use globustvp::oracle::{grid_oracle, solve_full_sdp, GridConfig};
use globustvp::sdp::SdpSettings;
use globustvp::synth::{generate_scene, SceneConfig};
use globustvp::{optimal_assignment, primal_cost, Error, SingleBlockConfig};

mod bench;

#[derive(Parser)]
#[command(name = "globustvp", version, about = "Manhattan-frame vanishing point estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic line set.
    Synth(SynthArgs),
    /// Estimate a Manhattan frame and labels for a line set.
    Solve(SolveArgs),
    /// Score a result against the scene's ground truth.
    Eval(EvalArgs),
    /// Monte Carlo sweeps over synthetic scenes.
    Bench(bench::BenchArgs),
    /// Cross-check GlobustVP against the full relaxation and the grid oracle.
    Certify(CertifyArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    n_lines: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    outlier_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 800.0)]
    focal: f64,
    #[arg(long, default_value_t = 640.0)]
    width: f64,
    #[arg(long, default_value_t = 480.0)]
    height: f64,
    /// Threshold that outliers are kept away from.
    #[arg(long, default_value_t = 0.03)]
    c: f64,
    /// Allow outliers arbitrarily close to a planted direction.
    #[arg(long)]
    indistinguishable_outliers: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Globustvp,
    Ransac,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Globustvp => "globustvp",
            Method::Ransac => "ransac",
        }
    }
}

#[derive(Args, Clone)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 0.03)]
    c: f64,
    #[arg(long, default_value_t = 6)]
    sample_size: usize,
    #[arg(long, default_value_t = 20)]
    rounds: usize,
    /// RANSAC hypotheses per direction.
    #[arg(long, default_value_t = 1000)]
    iters: usize,
    /// Skip the rotation-constrained refinement.
    #[arg(long)]
    no_refine: bool,
}

impl SolverArgs {
    pub fn globustvp_config(&self, seed: u64) -> SingleBlockConfig {
        SingleBlockConfig {
            c: self.c,
            sample_size: self.sample_size,
            rounds: self.rounds,
            refine: !self.no_refine,
            parallel: false,
            seed,
            ..SingleBlockConfig::default()
        }
    }

    pub fn ransac_config(&self, seed: u64) -> RansacConfig {
        RansacConfig {
            iters: self.iters,
            c: self.c,
            seed,
        }
    }
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Method::Globustvp)]
    method: Method,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    solver: SolverArgs,
    /// Record wall-clock time in the result (makes output run-dependent).
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    result: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Defaults to the scene file stem.
    #[arg(long)]
    scene_id: Option<String>,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long = "in")]
    input: PathBuf,
    /// Lines passed to the full relaxation.
    #[arg(long, default_value_t = 4)]
    m_max: usize,
    #[arg(long, default_value_t = 0.03)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// An error with its process exit code.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn input(message: impl Display) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::NumericalFailure(_)) { 2 } else { 1 };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

/// Writes to `path`, or stdout when absent.
fn emit(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Failure::input(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_scene(path: &Path) -> CliResult<LineSet> {
    parse_line_set(&read(path)?).map_err(|e| Failure::input(format!("{}: {e}", path.display())))
}

pub fn csv_text(rows: &[impl serde::Serialize]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(Failure::input)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::input(e.to_string()))?;
    String::from_utf8(bytes).map_err(Failure::input)
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let config = SceneConfig {
        n_lines: args.n_lines,
        noise_sigma_px: args.sigma,
        outlier_ratio: args.outlier_ratio,
        width: args.width,
        height: args.height,
        focal: args.focal,
        c: args.c,
        distinguishable_outliers: !args.indistinguishable_outliers,
        seed: args.seed,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&config)?;
    let set = LineSet {
        intrinsics: scene.intrinsics,
        lines: scene.lines,
        frame_gt: Some(scene.frame_gt),
    };
    emit(args.out.as_deref(), &line_set_to_json(&set))
}

/// Runs one method on a line set, returning the result and elapsed ms.
pub fn run_method(
    method: Method,
    set: &LineSet,
    solver: &SolverArgs,
    seed: u64,
) -> globustvp::Result<(ResultFile, f64)> {
    let start = Instant::now();
    let res = match method {
        Method::Globustvp => {
            let r = globustvp::globustvp(&set.lines, &solver.globustvp_config(seed))?;
            ResultFile::from_globustvp(&r, None)
        }
        Method::Ransac => {
            let r = ransac_baseline(&set.lines, &solver.ransac_config(seed))?;
            let cost = primal_cost(&r.frame, &r.labels, &set.lines, solver.c);
            ResultFile::from_frame("ransac", &r.frame, &r.labels, Some(cost), None)
        }
    };
    Ok((res, start.elapsed().as_secs_f64() * 1e3))
}

fn solve(args: &SolveArgs) -> CliResult<()> {
    let set = load_scene(&args.input)?;
    let (mut res, ms) = run_method(args.method, &set, &args.solver, args.seed)?;
    if args.timing {
        res.timing_ms = Some(ms);
    }
    emit(args.out.as_deref(), &res.to_json())
}

fn eval(args: &EvalArgs) -> CliResult<()> {
    let set = load_scene(&args.scene)?;
    let res = parse_result(&read(&args.result)?)
        .map_err(|e| Failure::input(format!("{}: {e}", args.result.display())))?;
    if res.labels.len() != set.lines.len() {
        return Err(Failure::input(format!(
            "{}: labels has {} entries, scene has {} lines",
            args.result.display(),
            res.labels.len(),
            set.lines.len()
        )));
    }
    let scene_id = args.scene_id.clone().unwrap_or_else(|| {
        args.scene
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    });
    let row: EvalRow = evaluate(
        &scene_id,
        &res.method,
        &res.frame()?,
        &res.labels(),
        &set.lines,
        &set.intrinsics,
        set.frame_gt.as_ref(),
        res.timing_ms,
    );
    emit(args.out.as_deref(), &csv_text(&[row])?)
}

fn certify(args: &CertifyArgs) -> CliResult<()> {
    let set = load_scene(&args.input)?;
    let lines = &set.lines;
    let c = args.c;
    let mut out = String::new();
    let mut line = |s: String| {
        out.push_str(&s);
        out.push('\n');
    };
    line(format!("lines: {}", lines.len()));

    let config = SingleBlockConfig {
        c,
        parallel: false,
        seed: args.seed,
        ..SingleBlockConfig::default()
    };
    let estimate = match globustvp::globustvp(lines, &config) {
        Ok(r) => {
            line(format!("globustvp cost: {:.9e}", r.cost));
            for (i, cert) in r.certificates.iter().enumerate() {
                match cert {
                    Some(cert) => line(format!(
                        "globustvp vp{} relative gap: {:.3e} rank ratio: {:.3e}",
                        i + 1,
                        cert.gap,
                        cert.max_rank_ratio()
                    )),
                    None => line(format!("globustvp vp{}: no certificate (fewer than 2 lines)", i + 1)),
                }
            }
            Some(r)
        }
        Err(Error::NumericalFailure(msg)) => return Err(Error::NumericalFailure(msg).into()),
        Err(e) => {
            line(format!("globustvp: skipped ({e})"));
            None
        }
    };

    let grid = grid_oracle(lines, c, &GridConfig::default())?;
    line(format!("grid oracle cost: {:.9e}", grid.cost));
    if let Some(r) = &estimate {
        line(format!("globustvp - grid: {:.3e}", r.cost - grid.cost));
    }

    let m = lines.len().min(args.m_max);
    if m == 0 {
        emit(None, &out)?;
        return Ok(());
    }
    let subset = &lines[..m];
    let full = solve_full_sdp(subset, c, &SdpSettings::default())?;
    let sub_grid = grid_oracle(subset, c, &GridConfig::default())?;
    line(format!("full sdp lines: {m}"));
    line(format!("full sdp objective: {:.9e}", full.objective));
    line(format!("full sdp relative gap: {:.3e}", full.certificate.gap));
    line(format!("full sdp rank ratio: {:.3e}", full.certificate.max_rank_ratio()));
    line(format!("grid oracle cost on subset: {:.9e}", sub_grid.cost));
    line(format!(
        "full sdp <= grid + 1e-6: {}",
        full.objective <= sub_grid.cost + 1e-6
    ));
    if let Some(r) = &estimate {
        let (_, sub_cost) = optimal_assignment(&r.frame, subset, c);
        line(format!("globustvp cost on subset: {sub_cost:.9e}"));
        line(format!("full sdp <= globustvp + 1e-6: {}", full.objective <= sub_cost + 1e-6));
    }
    emit(None, &out)
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Solve(a) => solve(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench::run(a),
        Command::Certify(a) => certify(a),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
