//! Command-line front end: simulate, estimate, test, and study.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use tvgraph::clime::{self, ClimeConfig};
use tvgraph::data;
use tvgraph::debias;
use tvgraph::error::{Error, Result};
use tvgraph::graph::{EdgeSet, GraphProperty};
use tvgraph::io;
use tvgraph::kernel::{self, KernelSpec};
use tvgraph::stepdown::{self, LambdaRule, RocConfig, StudyConfig, TestConfig};

#[derive(Parser, Debug)]
#[command(
    name = "tvgraph",
    about = "Time-varying graphical model estimation and topology tests",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic paired dataset with ground-truth edge supports.
    Simulate(SimulateArgs),
    /// Estimate precision matrices on a time grid from a dataset file.
    Estimate(EstimateArgs),
    /// Test a monotone graph property on the time-varying graph.
    Test(TestArgs),
    /// Run a Monte-Carlo study (calibration or roc).
    Study(StudyArgs),
}

#[derive(Args, Debug, Clone)]
struct Shared {
    /// Root seed; all randomness derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of evaluation grid points.
    #[arg(long, default_value_t = 50)]
    grid: usize,
    /// Explicit bandwidth (overrides --h-const).
    #[arg(long)]
    h: Option<f64>,
    /// Bandwidth constant c in h = c n^{-1/5}.
    #[arg(long = "h-const", default_value_t = 1.2)]
    h_const: f64,
    /// Fixed sparsity parameter (mutually exclusive with --cv).
    #[arg(long, conflicts_with = "cv")]
    lambda: Option<f64>,
    /// Select lambda by cross-validation.
    #[arg(long)]
    cv: bool,
    /// Number of cross-validation folds.
    #[arg(long = "cv-folds", default_value_t = 5)]
    cv_folds: usize,
    /// Test level.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Bootstrap sample count.
    #[arg(long = "bootstrap", default_value_t = 500)]
    bootstrap: usize,
    /// Worker thread count (default: all cores). Results do not depend on it.
    #[arg(long)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// key=value config file; command-line flags win on conflict.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct SimulateArgs {
    /// Number of variables per subject.
    #[arg(long, default_value_t = 20)]
    d: usize,
    /// Number of observations.
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Degree bound of the null hypothesis.
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Generate under the alternative (a hub exceeding degree k).
    #[arg(long)]
    alternative: bool,
    /// Scale of the subject-specific noise covariance.
    #[arg(long = "nuisance-scale", default_value_t = 1.0)]
    nuisance_scale: f64,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug, Clone)]
struct EstimateArgs {
    /// Dataset file (z,x1..xd,y1..yd).
    #[arg(long)]
    input: PathBuf,
    /// Use the within-subject baseline (X only) instead of the inter-subject
    /// estimator.
    #[arg(long)]
    within: bool,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug, Clone)]
struct TestArgs {
    /// Dataset file (z,x1..xd,y1..yd).
    #[arg(long)]
    input: PathBuf,
    /// Property: connected | components<=K | max-degree>K | isolated<=K |
    /// clique>K.
    #[arg(long)]
    property: String,
    /// Force the step-down procedure even for max-degree properties.
    #[arg(long)]
    stepdown: bool,
    /// Compute the rejected degree from the cross-grid union of rejections.
    #[arg(long = "union-degree")]
    union_degree: bool,
    #[command(flatten)]
    shared: Shared,
}

#[derive(Args, Debug, Clone)]
struct StudyArgs {
    /// Study kind: calibration | roc.
    #[arg(long)]
    study: String,
    #[arg(long, default_value_t = 20)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Sample sizes (calibration) or the single sample size (roc).
    #[arg(long, value_delimiter = ',', default_value = "400,1000")]
    n: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long = "nuisance-scale", default_value_t = 1.0)]
    nuisance_scale: f64,
    /// Rank-one perturbations on the nuisance base matrix (roc study only).
    #[arg(long = "nuisance-perturbations", default_value_t = 0)]
    nuisance_perturbations: usize,
    /// Resume from a previous checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    #[command(flatten)]
    shared: Shared,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    let matches = Cli::command().get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };
    if let Command::Test(a) = &cli.command {
        if let Err(e) = a.property.parse::<GraphProperty>() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli, &matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Parse { .. }
        | Error::Data(_)
        | Error::Construction(_)
        | Error::ZeroVariance { .. }
        | Error::Io(_) => 3,
        Error::NoSupport { .. }
        | Error::Infeasible { .. }
        | Error::SolverStall { .. }
        | Error::DegenerateDenominator { .. }
        | Error::EmptySelector
        | Error::Asymmetric
        | Error::OracleScale { .. }
        | Error::Stall { .. }
        | Error::FoldNoSupport { .. } => 4,
    }
}

fn run(cli: Cli, matches: &ArgMatches) -> Result<()> {
    let sub = matches.subcommand().map(|(_, m)| m);
    match cli.command {
        Command::Simulate(mut a) => {
            merge_config(&mut a.shared, sub)?;
            setup(&a.shared)?;
            cmd_simulate(&a)
        }
        Command::Estimate(mut a) => {
            merge_config(&mut a.shared, sub)?;
            setup(&a.shared)?;
            cmd_estimate(&a)
        }
        Command::Test(mut a) => {
            merge_config(&mut a.shared, sub)?;
            setup(&a.shared)?;
            cmd_test(&a)
        }
        Command::Study(mut a) => {
            merge_config(&mut a.shared, sub)?;
            setup(&a.shared)?;
            cmd_study(&a)
        }
    }
}

/// Applies config-file values underneath the flags: a key is used only when
/// the matching flag was not given on the command line.
fn merge_config(shared: &mut Shared, sub: Option<&ArgMatches>) -> Result<()> {
    let Some(path) = shared.config.clone() else { return Ok(()) };
    let text = fs::read_to_string(&path)?;
    let mut map = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                row: idx + 1,
                message: format!("expected key=value, got {line:?}"),
            });
        };
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    let from_cli = |id: &str| -> bool {
        sub.and_then(|m| m.value_source(id))
            .map(|s| s == ValueSource::CommandLine)
            .unwrap_or(false)
    };
    let parse = |key: &str, v: &str| -> Result<f64> {
        v.parse().map_err(|_| Error::Data(format!("config key {key}: bad number {v:?}")))
    };
    for (k, v) in &map {
        match k.as_str() {
            "seed" if !from_cli("seed") => shared.seed = parse(k, v)? as u64,
            "grid" if !from_cli("grid") => shared.grid = parse(k, v)? as usize,
            "h" if !from_cli("h") => shared.h = Some(parse(k, v)?),
            "h-const" if !from_cli("h_const") => shared.h_const = parse(k, v)?,
            "lambda" if !from_cli("lambda") => shared.lambda = Some(parse(k, v)?),
            "cv" if !from_cli("cv") => shared.cv = v == "true" || v == "1",
            "cv-folds" if !from_cli("cv_folds") => shared.cv_folds = parse(k, v)? as usize,
            "alpha" if !from_cli("alpha") => shared.alpha = parse(k, v)?,
            "bootstrap" if !from_cli("bootstrap") => shared.bootstrap = parse(k, v)? as usize,
            "jobs" if !from_cli("jobs") => shared.jobs = Some(parse(k, v)? as usize),
            "out" if !from_cli("out") => shared.out = PathBuf::from(v),
            "seed" | "grid" | "h" | "h-const" | "lambda" | "cv" | "cv-folds" | "alpha"
            | "bootstrap" | "jobs" | "out" => {}
            other => {
                return Err(Error::Data(format!("unknown config key {other:?}")));
            }
        }
    }
    Ok(())
}

fn setup(shared: &Shared) -> Result<()> {
    if let Some(jobs) = shared.jobs {
        if jobs == 0 {
            return Err(Error::Data("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Data(format!("thread pool: {e}")))?;
    }
    fs::create_dir_all(&shared.out)?;
    Ok(())
}

fn test_config(shared: &Shared) -> TestConfig {
    let lambda = match (shared.lambda, shared.cv) {
        (Some(l), _) => LambdaRule::Fixed(l),
        (None, true) => LambdaRule::CrossValidated { folds: shared.cv_folds },
        (None, false) => LambdaRule::Scaled(0.9),
    };
    TestConfig {
        alpha: shared.alpha,
        b_boot: shared.bootstrap,
        grid_size: shared.grid,
        h_const: shared.h_const,
        h: shared.h,
        lambda,
        seed: shared.seed,
        union_degree: false,
    }
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let path = data::generate_precision_path(a.d, a.k, a.alternative, a.shared.seed)?;
    let lx = data::generate_nuisance(a.d, tvgraph::seeding::sub_seed(a.shared.seed, "lx", 0))?;
    let ly = data::generate_nuisance(a.d, tvgraph::seeding::sub_seed(a.shared.seed, "ly", 0))?;
    let ds = data::sample_dataset(&path, &lx, &ly, a.n, a.nuisance_scale, a.shared.seed)?;
    let ds_path = a.shared.out.join("dataset.csv");
    io::write_paired_dataset(&ds_path, &ds)?;

    // ground-truth edge supports on the evaluation grid, 1-based
    let grid = kernel::default_grid(ds.z(), a.shared.grid);
    let mut truth = String::from("grid_index,z,j,k\n");
    for (t, &z) in grid.iter().enumerate() {
        for (j, k) in path.support_at(z) {
            writeln!(truth, "{},{},{},{}", t + 1, z, j + 1, k + 1).unwrap();
        }
    }
    let truth_path = a.shared.out.join("truth.csv");
    fs::write(&truth_path, truth)?;
    println!("wrote {} ({} rows) and {}", ds_path.display(), a.n, truth_path.display());
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct EstimateManifest {
    n: usize,
    d: usize,
    h: f64,
    lambda: f64,
    estimator: String,
    grid: Vec<f64>,
    theta_files: Vec<String>,
    theta_de_files: Vec<String>,
}

fn cmd_estimate(a: &EstimateArgs) -> Result<()> {
    let ds = io::read_paired_dataset(&a.input)?;
    let n = ds.n();
    let d = ds.d();
    let h = a.shared.h.unwrap_or_else(|| kernel::choose_bandwidth(n, a.shared.h_const));
    let kspec = KernelSpec::epanechnikov(h);
    let grid = kernel::default_grid(ds.z(), a.shared.grid);

    let support = kernel::min_support_fraction(ds.z(), &kspec, &grid);
    if support < 0.3 {
        log::warn!(
            "minimum kernel support fraction {support:.2} is below 0.30; consider a larger \
             bandwidth"
        );
    }

    let lambda = if let Some(l) = a.shared.lambda {
        l
    } else if a.shared.cv {
        let lgrid = clime::lambda_grid(n, d, h, clime::DEFAULT_LAMBDA_CONSTANTS);
        let sel = clime::cross_validate_lambda(&ds, &kspec, &lgrid, a.shared.cv_folds, a.shared.seed)?;
        io::write_cv_table(&a.shared.out.join("cv_table.csv"), &sel)?;
        sel.lambda_star
    } else {
        0.9 * clime::lambda_scale(n, d, h)
    };
    let cfg = ClimeConfig::new(lambda);

    let mut manifest = EstimateManifest {
        n,
        d,
        h,
        lambda,
        estimator: if a.within { "within".into() } else { "inter".into() },
        grid: grid.clone(),
        theta_files: Vec::new(),
        theta_de_files: Vec::new(),
    };
    for (t, &z) in grid.iter().enumerate() {
        let cov = if a.within {
            kernel::smoothed_cov_within(ds.x(), ds.z(), z, &kspec)?
        } else {
            kernel::smoothed_cov_inter(&ds, z, &kspec)?
        };
        let sigma = 0.5 * (&cov.matrix + cov.matrix.transpose());
        let est = clime::clime_full(&sigma, z, &cfg)?;
        let de = debias::debias(&est.matrix, &sigma, z)?;
        let tf = format!("theta_{:03}.csv", t + 1);
        let df = format!("theta_de_{:03}.csv", t + 1);
        io::write_matrix(&a.shared.out.join(&tf), &est.matrix)?;
        io::write_matrix(&a.shared.out.join(&df), &de.matrix)?;
        manifest.theta_files.push(tf);
        manifest.theta_de_files.push(df);
    }
    io::write_json(&a.shared.out.join("manifest.json"), &manifest)?;
    println!(
        "estimated {} grid points (h = {h:.4}, lambda = {lambda:.4}) into {}",
        grid.len(),
        a.shared.out.display()
    );
    Ok(())
}

fn cmd_test(a: &TestArgs) -> Result<()> {
    let property: GraphProperty = a.property.parse()?;
    let ds = io::read_paired_dataset(&a.input)?;
    let mut cfg = test_config(&a.shared);
    cfg.union_degree = a.union_degree;
    cfg.validate()?;

    let (reject, d_rej, quantiles, iterations, rejected, lambda, h) = match property {
        GraphProperty::MaxDegreeGreater(k) if !a.stepdown => {
            let out = stepdown::test_max_degree(&ds, k, &cfg)?;
            (out.reject, Some(out.d_rej), vec![out.quantile], 1, out.rejected, out.lambda, out.h)
        }
        _ => {
            let out = stepdown::stepdown_test(&ds, &property, &cfg)?;
            (
                out.reject,
                None,
                out.quantile_trace,
                out.iterations,
                out.rejected,
                out.lambda,
                out.h,
            )
        }
    };

    let d = ds.d();
    for (t, es) in rejected.iter().enumerate() {
        io::write_edge_list(&a.shared.out.join(format!("rejected_{:03}.txt", t + 1)), es)?;
    }
    let union = rejected.iter().fold(EdgeSet::empty(d), |acc, es| acc.union(es));
    let report = io::TestReport {
        procedure: if d_rej.is_some() { "max-degree".into() } else { "stepdown".into() },
        property: property.to_string(),
        n: ds.n(),
        d,
        alpha: cfg.alpha,
        lambda,
        h,
        b_boot: cfg.b_boot,
        seed: cfg.seed,
        reject,
        d_rej,
        quantiles: quantiles.clone(),
        iterations,
        rejected_edges: union.iter().map(|(j, k)| (j + 1, k + 1)).collect(),
    };
    io::write_json(&a.shared.out.join("report.json"), &report)?;

    let mut text = String::new();
    writeln!(text, "property:   {}", report.property).unwrap();
    writeln!(text, "procedure:  {}", report.procedure).unwrap();
    writeln!(text, "n = {}, d = {}, h = {:.4}, lambda = {:.4}", report.n, d, h, lambda).unwrap();
    writeln!(text, "alpha = {}, B = {}, seed = {}", cfg.alpha, cfg.b_boot, cfg.seed).unwrap();
    if let Some(dr) = d_rej {
        writeln!(text, "d_rej = {dr}").unwrap();
    }
    match quantiles.last() {
        Some(q) => writeln!(text, "quantile c(1-alpha) = {q:.4}").unwrap(),
        None => writeln!(text, "no bootstrap round was needed").unwrap(),
    }
    writeln!(text, "decision:   {}", if reject { "REJECT" } else { "ACCEPT" }).unwrap();
    fs::write(a.shared.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointLine {
    n: usize,
    rep: u64,
    alternative: bool,
    reject: bool,
}

fn cmd_study(a: &StudyArgs) -> Result<()> {
    match a.study.as_str() {
        "calibration" => cmd_study_calibration(a),
        "roc" => cmd_study_roc(a),
        other => Err(Error::Data(format!(
            "unknown study {other:?}; expected calibration or roc"
        ))),
    }
}

fn cmd_study_calibration(a: &StudyArgs) -> Result<()> {
    let cfg = StudyConfig {
        d: a.d,
        k_hub: a.k,
        n_values: a.n.clone(),
        reps: a.reps,
        b_boot: a.shared.bootstrap,
        alpha: a.shared.alpha,
        nuisance_scale: a.nuisance_scale,
        grid_size: a.shared.grid,
        h_const: a.shared.h_const,
        cv_folds: a.shared.cv_folds,
        seed: a.shared.seed,
    };
    let ckpt_path = a.shared.out.join("checkpoint.jsonl");
    let mut done: BTreeMap<(usize, u64, bool), bool> = BTreeMap::new();
    if a.resume && ckpt_path.exists() {
        for (idx, line) in fs::read_to_string(&ckpt_path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let c: CheckpointLine = serde_json::from_str(line).map_err(|e| Error::Parse {
                row: idx + 1,
                message: format!("bad checkpoint line: {e}"),
            })?;
            done.insert((c.n, c.rep, c.alternative), c.reject);
        }
        eprintln!("resuming: {} completed replications found", done.len());
    } else if ckpt_path.exists() {
        fs::remove_file(&ckpt_path)?;
    }
    let mut ckpt = fs::OpenOptions::new().create(true).append(true).open(&ckpt_path)?;

    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        let lambda = match a.shared.lambda {
            Some(l) => l,
            None => stepdown::pilot_lambda(&cfg, n)?,
        };
        eprintln!("n = {n}: lambda = {lambda:.4}");
        let pending: Vec<(u64, bool)> = (0..cfg.reps as u64)
            .flat_map(|rep| [(rep, false), (rep, true)])
            .filter(|&(rep, alt)| !done.contains_key(&(n, rep, alt)))
            .collect();
        let chunk = 16.max(rayon::current_num_threads());
        for (ci, batch) in pending.chunks(chunk).enumerate() {
            use rayon::prelude::*;
            let results: Vec<(u64, bool, bool)> = batch
                .par_iter()
                .map(|&(rep, alt)| -> Result<(u64, bool, bool)> {
                    let reject = stepdown::calibration_rep(&cfg, n, lambda, alt, rep)?;
                    Ok((rep, alt, reject))
                })
                .collect::<Result<Vec<_>>>()?;
            for (rep, alt, reject) in results {
                let line = CheckpointLine { n, rep, alternative: alt, reject };
                writeln!(ckpt, "{}", serde_json::to_string(&line).unwrap())?;
                done.insert((n, rep, alt), reject);
            }
            ckpt.flush()?;
            eprintln!(
                "n = {n}: {} / {} replications",
                ((ci + 1) * chunk).min(pending.len()),
                pending.len()
            );
        }
        let count = |alt: bool| -> usize {
            (0..cfg.reps as u64)
                .filter(|&rep| done.get(&(n, rep, alt)) == Some(&true))
                .count()
        };
        rows.push(stepdown::CalibrationRow {
            n,
            lambda,
            type_i: count(false) as f64 / cfg.reps as f64,
            power: count(true) as f64 / cfg.reps as f64,
        });
    }
    let table = a.shared.out.join("calibration.csv");
    io::write_calibration_table(&table, &rows)?;
    println!("wrote {}", table.display());
    for r in &rows {
        println!("n = {:5}  type I = {:.3}  power = {:.3}", r.n, r.type_i, r.power);
    }
    Ok(())
}

fn cmd_study_roc(a: &StudyArgs) -> Result<()> {
    let n = *a.n.first().ok_or_else(|| Error::Data("need a sample size".into()))?;
    let cfg = RocConfig {
        d: a.d,
        k_hub: a.k,
        n,
        reps: a.reps,
        nuisance_scale: a.nuisance_scale,
        nuisance_perturbations: a.nuisance_perturbations,
        z_points: vec![0.25, 0.5, 0.75],
        h_const: a.shared.h_const,
        lambda_sweep: stepdown::default_lambda_sweep(),
        seed: a.shared.seed,
    };
    let study = stepdown::roc_study(&cfg)?;
    let mut table = String::from("estimator,z,fpr,tpr\n");
    for (z, inter, within) in &study.per_z {
        for &(fpr, tpr) in &inter.points {
            writeln!(table, "inter,{z},{fpr},{tpr}").unwrap();
        }
        for &(fpr, tpr) in &within.points {
            writeln!(table, "within,{z},{fpr},{tpr}").unwrap();
        }
    }
    let table_path = a.shared.out.join("roc.csv");
    fs::write(&table_path, table)?;
    io::write_json(&a.shared.out.join("roc.json"), &study)?;
    println!("wrote {}", table_path.display());
    println!(
        "AUC inter = {:.3}, AUC within = {:.3}",
        study.inter.auc, study.within.auc
    );
    Ok(())
}
