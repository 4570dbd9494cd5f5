use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use act_slam::act::ActConfig;
use act_slam::bench::{reference_poses, run_bench, write_csv, BenchSettings};
use act_slam::eval::{accuracy_curve, add_error, ate_rmse, auc, label_pixel_error, object_pose_error};
use act_slam::graph::RegularizationWeight;
use act_slam::io::{
    camera_trajectory, format_float, landmark_poses, parse_graph, parse_labels, parse_models, parse_trajectory,
    write_graph, write_labels, write_trajectory, ReportFile, TruthFile,
};
use act_slam::labeling::{generate_labels, CameraIntrinsics, GeometricScorer, LabelOptions, Thresholds};
use act_slam::sim::{generate, ScenarioConfig};
use act_slam::solvers::{solve, IrlsConfig, LmConfig, Method, MethodConfig};

#[derive(Parser)]
#[command(name = "act-slam", version, about = "Object-SLAM pose-graph optimization with automatic covariance tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scenario.
    Simulate(SimulateArgs),
    /// Solve a pose graph.
    Optimize(OptimizeArgs),
    /// Produce hybrid pseudo-labels from a solved graph.
    Label(LabelArgs),
    /// Score an estimated trajectory and optional labels.
    Evaluate(EvaluateArgs),
    /// Compare methods over scenario configs and seeds.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON; defaults apply to missing fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth camera trajectory (TUM).
    #[arg(long)]
    gt: PathBuf,
    /// Landmark poses and outlier flags; defaults to the --gt path with a .json extension.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct SolverArgs {
    #[arg(long, default_value = "act")]
    method: Method,
    #[arg(long)]
    kernel_param: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Relative loss tolerance of the LM iterations.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    lambda_prime: Option<f64>,
    #[arg(long)]
    chi2_conf: Option<f64>,
    #[arg(long)]
    max_outer: Option<usize>,
}

impl SolverArgs {
    fn config(&self) -> Result<MethodConfig, String> {
        let mut lm = LmConfig::default();
        let mut act = ActConfig::default();
        let mut irls = IrlsConfig::default();
        if let Some(n) = self.max_iters {
            lm.max_iters = n;
        }
        if let Some(t) = self.tol {
            lm.rel_tol = t;
        }
        if let Some(l) = self.lambda_prime {
            act.lambda_prime = RegularizationWeight::new(l).ok_or_else(|| format!("invalid lambda' {l}"))?;
        }
        if let Some(c) = self.chi2_conf {
            act.chi2_confidence = c;
            lm.chi2_confidence = c;
        }
        if let Some(n) = self.max_outer {
            act.max_outer = n;
            irls.max_outer = n;
        }
        Ok(MethodConfig {
            kernel_parameter: self.kernel_param,
            lm,
            irls,
            act,
        })
    }
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    graph: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
    /// Estimated camera trajectory (TUM).
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct LabelArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Cuboid registry JSON keyed by object id.
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    intrinsics: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Reference trajectory for the geometric scorer (TUM).
    #[arg(long)]
    gt: PathBuf,
    /// Reference landmarks for the geometric scorer.
    #[arg(long)]
    truth: PathBuf,
    /// Applies to every object; per-object defaults are used otherwise.
    #[arg(long, requires = "s_in")]
    s_pgo: Option<f64>,
    #[arg(long, requires = "s_pgo")]
    s_in: Option<f64>,
    /// Fall back to the lower scorer when the higher one misses its threshold.
    #[arg(long)]
    fallback: bool,
    /// Emit no labels when the flagged outlier fraction exceeds this.
    #[arg(long)]
    max_outlier_rate: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    est: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Rigidly align the estimate before computing ATE.
    #[arg(long)]
    align: bool,
    /// Report with landmark estimates; needs --truth.
    #[arg(long, requires = "truth")]
    report: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Labels to score; needs --truth, --models and --intrinsics.
    #[arg(long, requires_all = ["truth", "models", "intrinsics"])]
    labels: Option<PathBuf>,
    #[arg(long)]
    models: Option<PathBuf>,
    #[arg(long)]
    intrinsics: Option<PathBuf>,
    /// Largest ADD threshold (m) for the label AUC.
    #[arg(long, default_value_t = 0.1)]
    add_max: f64,
}

#[derive(Args)]
struct BenchArgs {
    /// Directory of scenario JSON files.
    #[arg(long)]
    scenarios: PathBuf,
    /// Comma-separated methods, or `all`.
    #[arg(long, default_value = "all")]
    methods: String,
    #[arg(long, default_value_t = 50)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

struct Failure {
    kind: &'static str,
    message: String,
}

impl Failure {
    fn new(kind: &'static str, message: impl ToString) -> Self {
        Self {
            kind,
            message: message.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::new("io", format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read(path)?).map_err(|e| Failure::new("parse", format!("{}: {e}", path.display())))
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::new("io", e))
}

fn simulate(args: SimulateArgs) -> Outcome {
    let mut config: ScenarioConfig = match &args.config {
        Some(path) => parse_json(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let (graph, truth) = generate(&config).map_err(|e| Failure::new("config", e))?;
    write(&args.out, &write_graph(&graph))?;
    let gt = act_slam::eval::Trajectory::from_poses(truth.cameras.iter().copied());
    write(&args.gt, &write_trajectory(&gt))?;
    let truth_path = args.truth.unwrap_or_else(|| args.gt.with_extension("json"));
    write(&truth_path, &to_json(&TruthFile::from_truth(&truth))?)
}

fn optimize(args: OptimizeArgs) -> Outcome {
    let graph = parse_graph(&read(&args.graph)?).map_err(|e| Failure::new("parse", e))?;
    let config = args.solver.config().map_err(|e| Failure::new("config", e))?;
    let report = solve(&graph, args.solver.method, &config).map_err(|e| Failure::new("solve", e))?;
    write(&args.out, &write_trajectory(&camera_trajectory(&report.estimates)))?;
    if let Some(path) = &args.report {
        write(path, &to_json(&ReportFile::new(&report, &graph))?)?;
    }
    Ok(())
}

fn load_references(gt: &Path, truth: &Path) -> Result<(Vec<act_slam::liegroup::Pose>, TruthFile), Failure> {
    let traj = parse_trajectory(&read(gt)?).map_err(|e| Failure::new("parse", e))?;
    let truth: TruthFile = parse_json(truth)?;
    Ok((traj.poses().copied().collect(), truth))
}

fn label(args: LabelArgs) -> Outcome {
    let graph = parse_graph(&read(&args.graph)?).map_err(|e| Failure::new("parse", e))?;
    let report_file: ReportFile = parse_json(&args.report)?;
    let report = report_file.to_report().map_err(|e| Failure::new("parse", e))?;
    let models = parse_models(&read(&args.models)?).map_err(|e| Failure::new("parse", e))?;
    let intrinsics: CameraIntrinsics = parse_json(&args.intrinsics)?;
    let (cameras, truth) = load_references(&args.gt, &args.truth)?;
    let landmarks = truth.landmark_poses().map_err(|e| Failure::new("parse", e))?;
    let scorer = GeometricScorer::new(reference_poses(&cameras, &landmarks), intrinsics, &models);

    let mut options = match (args.s_pgo, args.s_in) {
        (Some(s_pgo), Some(s_in)) => {
            LabelOptions::uniform(Thresholds::new(s_pgo, s_in).map_err(|e| Failure::new("config", e))?)
        }
        _ => LabelOptions::default(),
    };
    options.fallback = args.fallback;
    options.max_outlier_rate = args.max_outlier_rate;
    let run = generate_labels(&graph, &report, &models, &intrinsics, &scorer, &options)
        .map_err(|e| Failure::new("label", e))?;
    write(&args.out, &write_labels(&run.labels).map_err(|e| Failure::new("io", e))?)?;
    if run.skipped {
        eprintln!(
            "{}",
            json!({"warning": "sequence skipped", "outlier_rate": run.outlier_rate})
        );
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Outcome {
    let est = parse_trajectory(&read(&args.est)?).map_err(|e| Failure::new("parse", e))?;
    let gt = parse_trajectory(&read(&args.gt)?).map_err(|e| Failure::new("parse", e))?;
    let mut rows: Vec<(&str, String)> = Vec::new();
    let ate = ate_rmse(&est, &gt, args.align).map_err(|e| Failure::new("eval", e))?;
    rows.push(("ate_m", format_float(ate)));

    let truth = match &args.truth {
        Some(path) => Some(parse_json::<TruthFile>(path)?),
        None => None,
    };
    let landmarks = match &truth {
        Some(t) => t.landmark_poses().map_err(|e| Failure::new("parse", e))?,
        None => BTreeMap::new(),
    };
    if let Some(path) = &args.report {
        let report: ReportFile = parse_json(path)?;
        let report = report.to_report().map_err(|e| Failure::new("parse", e))?;
        let errors: Vec<(f64, f64)> = landmark_poses(&report.estimates)
            .iter()
            .filter_map(|(j, p)| landmarks.get(j).map(|l| object_pose_error(p, l)))
            .collect();
        let n = errors.len().max(1) as f64;
        rows.push(("obj_trans_m", format_float(errors.iter().map(|e| e.0).sum::<f64>() / n)));
        rows.push(("obj_ori_rad", format_float(errors.iter().map(|e| e.1).sum::<f64>() / n)));
    }
    if let (Some(labels), Some(models), Some(intrinsics)) = (&args.labels, &args.models, &args.intrinsics) {
        let labels = parse_labels(&read(labels)?).map_err(|e| Failure::new("parse", e))?;
        let models = parse_models(&read(models)?).map_err(|e| Failure::new("parse", e))?;
        let intrinsics: CameraIntrinsics = parse_json(intrinsics)?;
        let references = reference_poses(&gt.poses().copied().collect::<Vec<_>>(), &landmarks);
        rows.push(("label_count", labels.len().to_string()));
        if !labels.is_empty() {
            let errors = label_pixel_error(&labels, |t, j| references.get(&(t, j)).copied(), &intrinsics, |j| {
                models.get(&j)
            })
            .map_err(|e| Failure::new("eval", e))?;
            rows.push(("label_px_median_kpmean", format_float(errors.median)));
            let add: Vec<f64> = labels
                .iter()
                .map(|l| add_error(&models[&l.object].keypoints(), &l.pose, &references[&(l.frame, l.object)]))
                .collect();
            let curve = accuracy_curve(&add, args.add_max, 201);
            rows.push(("label_add_auc", format_float(auc(&curve, args.add_max))));
        }
    }
    let mut csv = String::from("metric,value\n");
    for (k, v) in rows {
        csv += &format!("{k},{v}\n");
    }
    write(&args.out, &csv)
}

fn bench(args: BenchArgs) -> Outcome {
    let methods: Vec<Method> = if args.methods == "all" {
        Method::ALL.to_vec()
    } else {
        args.methods
            .split(',')
            .map(|m| m.trim().parse::<Method>())
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::new("config", e))?
    };
    let mut paths: Vec<PathBuf> = fs::read_dir(&args.scenarios)
        .map_err(|e| Failure::new("io", format!("{}: {e}", args.scenarios.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::new("config", "no scenario .json files found"));
    }
    let scenarios = paths
        .iter()
        .map(|p| {
            let name = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            Ok((name, parse_json::<ScenarioConfig>(p)?))
        })
        .collect::<Result<Vec<_>, Failure>>()?;
    let config = args.solver.config().map_err(|e| Failure::new("config", e))?;
    let rows = run_bench(&scenarios, &methods, args.seeds, &config, &BenchSettings::default())
        .map_err(|e| Failure::new("bench", e))?;
    write(&args.out, &write_csv(&rows))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", json!({"error": {"kind": "usage", "message": e.to_string().trim()}}));
            return ExitCode::from(2);
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Optimize(a) => optimize(a),
        Command::Label(a) => label(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Bench(a) => bench(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", json!({"error": {"kind": f.kind, "message": f.message}}));
            ExitCode::FAILURE
        }
    }
}
