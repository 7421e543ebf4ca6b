//! `dart` command-line tool.
//!
//! Exit codes: 0 on success, 2 for usage, input and configuration errors,
//! 3 for numeric failures. Verbosity is read from `DART_LOG`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use dart_core::experiment::{
    bootstrap_linear, fixed_design, run_experiment, BootMethod, ExperimentSpec, Tuning,
    DEFAULT_MIN_TOP_NODES,
};
use dart_core::io::{self, RunManifest};
use dart_core::simulation::{RegressionDataset, Setting};
use dart_core::tuning::{default_l, grid_step, select_g};
use dart_core::{build_tree_logged, run_bh, run_dart, ChildCap, DartError, DistanceMatrix, Result};

#[derive(Parser)]
#[command(name = "dart", version, about = "Distance assisted recursive testing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an aggregation tree from distances or planar coordinates.
    BuildTree(BuildTreeArgs),
    /// Test p-values on a tree.
    Test(TestArgs),
    /// Benjamini-Hochberg step-up.
    Bh(BhArgs),
    /// Monte Carlo FDR and sensitivity study.
    Simulate(SimulateArgs),
    /// Bootstrap rejection stability of a linear-model analysis.
    Bootstrap(BootstrapArgs),
    /// Re-hash the inputs recorded in a manifest.
    Verify {
        manifest: PathBuf,
    },
}

#[derive(Args)]
struct BuildTreeArgs {
    #[arg(long, conflicts_with = "coords", required_unless_present = "coords")]
    distances: Option<PathBuf>,
    #[arg(long)]
    coords: Option<PathBuf>,
    /// Children cap, an integer >= 2 or `inf`.
    #[arg(long = "M", default_value = "3")]
    max_children: ChildCap,
    /// Layer count. Defaults to the number of thresholds plus one, or to
    /// the feature-count rule with `--g auto`.
    #[arg(long = "L")]
    layers: Option<usize>,
    /// Comma-separated g(2)..g(L), or `auto`.
    #[arg(long = "g", default_value = "auto")]
    g: String,
    /// Sample size, required with `--g auto`.
    #[arg(long)]
    n: Option<usize>,
    /// Rescale distances so the largest is 1.
    #[arg(long)]
    normalize: bool,
    #[arg(long)]
    out: PathBuf,
    /// Write the greedy merge log as JSON lines.
    #[arg(long)]
    merge_log: Option<PathBuf>,
    /// Where to write the threshold search trace (default: next to `--out`).
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct TestArgs {
    #[arg(long)]
    tree: PathBuf,
    #[arg(long)]
    pvalues: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BhArgs {
    #[arg(long)]
    pvalues: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    setting: Setting,
    #[arg(long, default_value_t = 90)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, value_delimiter = ',', default_value = "0.05,0.1,0.15,0.2")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Generated and recorded in the manifest when absent.
    #[arg(long)]
    seed: Option<u64>,
    /// Share one layout, signal and tree across replications.
    #[arg(long)]
    fixed_layout: bool,
    /// Zero every effect.
    #[arg(long)]
    null: bool,
    /// Write the shared layout, truth and tree (requires `--fixed-layout`).
    #[arg(long, requires = "fixed_layout")]
    export_design: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BootstrapArgs {
    /// Outcome matrix (subjects x features) and design matrix (subjects x covariates).
    #[arg(long, num_args = 2, value_names = ["Y", "W"])]
    data: Vec<PathBuf>,
    #[arg(long)]
    tree: Option<PathBuf>,
    /// Comma-separated contrast over the design columns. Defaults to the
    /// second column, or the only one.
    #[arg(long, value_delimiter = ',')]
    contrast: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// `dart` or `bh`; defaults to `dart` when a tree is given.
    #[arg(long)]
    method: Option<BootMethod>,
    #[arg(long = "B", default_value_t = 200)]
    b: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DART_LOG", "warn")).init();
    let cli = Cli::parse();
    let argv: Vec<String> = std::env::args().collect();
    let result = match cli.command {
        Command::BuildTree(a) => build_tree_cmd(a, argv),
        Command::Test(a) => test_cmd(a, argv),
        Command::Bh(a) => bh_cmd(a, argv),
        Command::Simulate(a) => simulate_cmd(a, argv),
        Command::Bootstrap(a) => bootstrap_cmd(a, argv),
        Command::Verify { manifest } => verify_cmd(&manifest),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn set_jobs(jobs: Option<usize>) -> Result<()> {
    if let Some(j) = jobs {
        if j == 0 {
            return Err(DartError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(j)
            .build_global()
            .map_err(|e| DartError::Config(e.to_string()))?;
    }
    Ok(())
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map_or_else(|| "tree".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}{suffix}"))
}

fn build_tree_cmd(a: BuildTreeArgs, argv: Vec<String>) -> Result<()> {
    let (d, input) = match (&a.distances, &a.coords) {
        (Some(p), _) => (io::read_distances(p, a.normalize)?, p),
        (None, Some(p)) => {
            let d = DistanceMatrix::euclidean(&io::read_coords(p)?);
            let d = if a.normalize {
                DistanceMatrix::from_rows(&d.to_rows(), true)?
            } else {
                d
            };
            (d, p)
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let cap = a.max_children;
    let auto = a.g.trim().eq_ignore_ascii_case("auto");
    let (layers, thresholds, trace) = if auto {
        let n = a
            .n
            .ok_or_else(|| DartError::Config("--n is required with --g auto".into()))?;
        grid_step(n, d.len())?;
        let layers = match a.layers {
            Some(l) => l,
            None => match cap {
                ChildCap::Bounded(mc) => default_l(d.len(), mc, DEFAULT_MIN_TOP_NODES)?,
                ChildCap::Unbounded => {
                    return Err(DartError::Config("--L is required with --M inf and --g auto".into()))
                }
            },
        };
        if layers >= 2 {
            let (g, trace) = select_g(&d, n, cap, layers)?;
            (layers, g, Some(trace))
        } else {
            (layers, Vec::new(), None)
        }
    } else {
        let g = a
            .g
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| DartError::Config(format!("--g: '{s}' is not a number")))
            })
            .collect::<Result<Vec<_>>>()?;
        let layers = a.layers.unwrap_or(g.len() + 1);
        (layers, g, None)
    };
    let (tree, log) = build_tree_logged(&d, cap, layers, &thresholds)?;
    io::write_file(&a.out, &tree.to_json()?)?;
    if let Some(path) = &a.merge_log {
        let lines: Vec<String> = log.iter().map(serde_json::to_string).collect::<Result<_, _>>()?;
        io::write_file(path, &(lines.join("\n") + "\n"))?;
    }
    let trace_path = trace.as_ref().map(|_| a.trace.clone().unwrap_or_else(|| sibling(&a.out, ".gsearch.csv")));
    if let (Some(t), Some(path)) = (&trace, &trace_path) {
        io::write_file(path, &t.to_csv()?)?;
    }
    let config = json!({
        "max_children": cap,
        "layers": layers,
        "thresholds": thresholds,
        "g": if auto { "auto" } else { "explicit" },
        "n": a.n,
        "normalize": a.normalize,
        "features": d.len(),
        "trace": trace_path,
    });
    let mut manifest = RunManifest::new(argv, config, None);
    manifest.add_input(input)?;
    manifest.write(&sibling(&a.out, ".manifest.json"))?;
    log::info!("tree with {} layers over {} features", tree.layer_count(), tree.feature_count());
    Ok(())
}

fn test_cmd(a: TestArgs, argv: Vec<String>) -> Result<()> {
    let tree = io::read_tree(&a.tree)?;
    let p = io::read_pvalues(&a.pvalues)?;
    let outcome = run_dart(&tree, &p, a.alpha)?;
    io::write_file(&a.out.join("outcome.json"), &outcome.to_json()?)?;
    io::write_file(&a.out.join("layers.csv"), &outcome.summary_csv()?)?;
    io::write_file(&a.out.join("rejected.txt"), &io::write_feature_list(&outcome.rejected()))?;
    let mut manifest = RunManifest::new(argv, json!({ "alpha": a.alpha }), None);
    manifest.add_input(&a.tree)?;
    manifest.add_input(&a.pvalues)?;
    manifest.write(&a.out.join("manifest.json"))
}

fn bh_cmd(a: BhArgs, argv: Vec<String>) -> Result<()> {
    let p = io::read_pvalues(&a.pvalues)?;
    let rejected = run_bh(&p, a.alpha)?;
    io::write_file(&a.out.join("rejected.txt"), &io::write_feature_list(&rejected))?;
    let mut manifest = RunManifest::new(argv, json!({ "alpha": a.alpha }), None);
    manifest.add_input(&a.pvalues)?;
    manifest.write(&a.out.join("manifest.json"))
}

fn simulate_cmd(a: SimulateArgs, argv: Vec<String>) -> Result<()> {
    set_jobs(a.jobs)?;
    let seed = a.seed.unwrap_or_else(rand::random);
    let mut spec = ExperimentSpec::new(a.setting, a.n, a.m, seed);
    spec.alphas = a.alphas;
    spec.replications = a.reps;
    spec.fixed_layout = a.fixed_layout;
    spec.null_signal = a.null;
    spec.tuning = Tuning::Auto;
    let report = run_experiment(&spec)?;
    io::write_file(&a.out.join("report.csv"), &report.summary_csv()?)?;
    io::write_file(&a.out.join("replications.csv"), &report.records_csv()?)?;
    io::write_file(&a.out.join("report.json"), &serde_json::to_string_pretty(&report)?)?;
    if a.export_design {
        let (layout, signal, tree) = fixed_design(&spec)?;
        let dir = a.out.join("design");
        io::write_file(&dir.join("coords.csv"), &io::write_coords(&layout.coords)?)?;
        io::write_file(&dir.join("distances.csv"), &io::write_distances(&layout.distances)?)?;
        io::write_file(&dir.join("truth.csv"), &io::write_truth(&signal.truth)?)?;
        io::write_file(&dir.join("tree.json"), &tree.to_json()?)?;
    }
    let manifest = RunManifest::new(argv, serde_json::to_value(&spec)?, Some(seed));
    manifest.write(&a.out.join("manifest.json"))
}

fn bootstrap_cmd(a: BootstrapArgs, argv: Vec<String>) -> Result<()> {
    set_jobs(a.jobs)?;
    let (y_path, w_path) = (&a.data[0], &a.data[1]);
    let data = RegressionDataset::new(io::read_matrix(y_path)?, io::read_matrix(w_path)?)?;
    let tree = a.tree.as_deref().map(io::read_tree).transpose()?;
    let method = a
        .method
        .unwrap_or(if tree.is_some() { BootMethod::Dart } else { BootMethod::Bh });
    let p = data.w.ncols();
    let contrast = a.contrast.unwrap_or_else(|| {
        let mut q = vec![0.0; p];
        q[p.min(2) - 1] = 1.0;
        q
    });
    let seed = a.seed.unwrap_or_else(rand::random);
    let report = bootstrap_linear(&data, &contrast, tree.as_ref(), method, a.alpha, a.b, seed)?;
    io::write_file(&a.out.join("stability.csv"), &report.to_csv()?)?;
    let summary = json!({
        "requested": report.requested,
        "effective": report.effective,
        "low_share": report.low_share,
        "high_share": report.high_share,
    });
    io::write_file(&a.out.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    let config = json!({
        "method": method,
        "alpha": a.alpha,
        "B": a.b,
        "contrast": contrast,
    });
    let mut manifest = RunManifest::new(argv, config, Some(seed));
    manifest.add_input(y_path)?;
    manifest.add_input(w_path)?;
    if let Some(t) = &a.tree {
        manifest.add_input(t)?;
    }
    manifest.write(&a.out.join("manifest.json"))
}

fn verify_cmd(path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let manifest = RunManifest::from_json(&text)?;
    let stale = manifest.stale_inputs()?;
    if stale.is_empty() {
        println!("ok: {} inputs match", manifest.inputs.len());
        Ok(())
    } else {
        let list: Vec<String> = stale.iter().map(|p| p.display().to_string()).collect();
        Err(DartError::Validation(format!("inputs changed since the run: {}", list.join(", "))))
    }
}
