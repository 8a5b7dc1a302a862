use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use ewc::harness::bounds::crossover_analysis;
use ewc::harness::experiment::{dataset_for_seed, run_experiment_detailed, train_offline};
use ewc::harness::report::{export_report, load_report, render_svg, write_atomic, RegretReport};
use ewc::harness::sweep::sweep_k;
use ewc::harness::{parse_policy_list, parse_seed_list, ExperimentConfig};
use ewc::simulation::{load_dataset, save_dataset};
use ewc::{EwcError, PreferenceParams, Result};

#[derive(Parser)]
#[command(name = "ewc", version, about = "Expert-with-Clustering route recommendation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic datasets (one CSV per seed).
    Generate(CommonArgs),
    /// Fit separators and cluster the training users.
    Train(CommonArgs),
    /// Run every policy and export regret curves, bounds and a chart.
    Run(CommonArgs),
    /// Pick K by holdout regret on the training users.
    SweepK {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 12)]
        k_max: usize,
    },
    /// Summarize an existing output directory and redraw its chart.
    Report {
        /// Directory written by `run` (defaults to --out or the config's `out`).
        dir: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seeds, e.g. `0,1,5-9`.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated policies: ewc, ewc-l2, linucb, ftl, oracle-ftl, oracle-cluster, oracle-theta.
    #[arg(long)]
    policies: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    eta: Option<f64>,
    /// LinUCB exploration width.
    #[arg(long)]
    alpha: Option<f64>,
    /// Dataset CSV to use instead of generating data.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = &self.seed {
            cfg.seeds = parse_seed_list(s)?;
        }
        if let Some(out) = &self.out {
            cfg.out = out.clone();
        }
        if let Some(p) = &self.policies {
            cfg.policies = parse_policy_list(p)?;
        }
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if self.eta.is_some() {
            cfg.eta = self.eta;
        }
        if self.alpha.is_some() {
            cfg.linucb_alpha = self.alpha;
        }
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| EwcError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn generate(cfg: &ExperimentConfig) -> Result<()> {
    let population = cfg
        .resolve_population()?
        .ok_or_else(|| EwcError::Config("generate needs a population, not a dataset".into()))?;
    for &seed in &cfg.seeds {
        let data = dataset_for_seed(cfg, Some(&population), None, seed)?;
        let path = if cfg.seeds.len() == 1 {
            cfg.out.join("dataset.csv")
        } else {
            cfg.out.join(format!("dataset_seed{seed}.csv"))
        };
        save_dataset(&data, &path)?;
        println!("wrote {} ({} users, seed {seed})", path.display(), data.users.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainedModel {
    seed: u64,
    k: usize,
    centroids: Vec<PreferenceParams>,
    cluster_sizes: Vec<usize>,
    iterations: usize,
    converged: bool,
    degenerate_users: usize,
    l2_centroids: Option<Vec<PreferenceParams>>,
}

fn train(cfg: &ExperimentConfig) -> Result<()> {
    let population = cfg.resolve_population()?;
    let loaded = cfg.dataset.as_deref().map(load_dataset).transpose()?;
    let with_l2 = cfg.policies.contains(&ewc::harness::PolicyKind::EwcL2);
    let mut models = Vec::new();
    for &seed in &cfg.seeds {
        let data = dataset_for_seed(cfg, population.as_ref(), loaded.as_ref(), seed)?;
        let train: Vec<_> = data.train().collect();
        let m = train_offline(&train, cfg, seed, with_l2)?;
        println!(
            "seed {seed}: {} clusters, sizes {:?}, {} iterations, {} one-class users",
            m.loss_guided.centroids.len(),
            m.loss_guided.assignment.cluster_sizes(),
            m.loss_guided.iterations,
            m.degenerate_users()
        );
        models.push(TrainedModel {
            seed,
            k: m.loss_guided.centroids.len(),
            centroids: m.loss_guided.centroids.as_slice().to_vec(),
            cluster_sizes: m.loss_guided.assignment.cluster_sizes(),
            iterations: m.loss_guided.iterations,
            converged: m.loss_guided.converged,
            degenerate_users: m.degenerate_users(),
            l2_centroids: m.l2.as_ref().map(|r| r.centroids.as_slice().to_vec()),
        });
    }
    let path = cfg.out.join("model.json");
    write_json(&path, &models)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn print_summary(report: &RegretReport, delta: f64) {
    println!("{:<16} {:>22}", "policy", "median final regret");
    for &p in &report.metadata.policies {
        if let Some(m) = report.median_final_regret(p) {
            println!("{:<16} {:>22.1}", p.name(), m);
        }
    }
    let holds = report.bounds.iter().filter(|b| b.bound_holds).count();
    if !report.bounds.is_empty() {
        println!("bound holds for {holds}/{} seeds", report.bounds.len());
    }
    match crossover_analysis(report, delta) {
        Ok(s) => {
            println!("crossover (LinUCB below EWC): {}", s.empirical);
            if let Some(r) = s.reduction_percent {
                println!("EWC regret reduction vs LinUCB: {r:.2}%");
            }
            match (s.fitted_c, s.predicted_threshold) {
                (Some(c), Some(t)) => println!("fitted C = {c:.4}, predicted threshold T < {t:.1}"),
                (Some(c), None) => println!("fitted C = {c:.4} (no threshold, C <= 2)"),
                _ => println!("fitted C undefined at this horizon"),
            }
            println!(
                "centroid loss {:.4} vs {:.4} needed to beat oracle FTL: {}",
                s.l_hat_centroids,
                s.ftl_condition_rhs,
                if s.ftl_condition_holds { "holds" } else { "fails" }
            );
        }
        Err(_) => println!("crossover: needs both ewc and linucb"),
    }
}

fn run(cfg: &ExperimentConfig) -> Result<()> {
    let (report, _) = run_experiment_detailed(cfg)?;
    let files = export_report(&report, cfg, &cfg.out)?;
    print_summary(&report, cfg.linucb_delta);
    println!("wrote {}", files.regret_csv.display());
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let (report, echo) = load_report(dir)?;
    write_atomic(&dir.join("regret.svg"), render_svg(&report).as_bytes())?;
    print_summary(&report, echo.config.linucb_delta);
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, k_min: usize, k_max: usize) -> Result<()> {
    if k_min == 0 || k_min > k_max {
        return Err(EwcError::Config(format!("invalid K range {k_min}..={k_max}")));
    }
    let ks: Vec<usize> = (k_min..=k_max).collect();
    let result = sweep_k(cfg, &ks)?;
    let path = cfg.out.join("sweep_k.csv");
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &result.rows {
        w.serialize(row).map_err(|source| EwcError::Csv {
            path: path.clone(),
            source,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| EwcError::io(&path, e.into_error()))?;
    write_atomic(&path, &bytes)?;
    println!("best K = {}", result.best_k);
    println!("wrote {}", path.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(&a.resolve()?),
        Command::Train(a) => train(&a.resolve()?),
        Command::Run(a) => run(&a.resolve()?),
        Command::SweepK { common, k_min, k_max } => sweep(&common.resolve()?, k_min, k_max),
        Command::Report { dir, common } => {
            let dir = match dir {
                Some(d) => d,
                None => common.resolve()?.out,
            };
            report(&dir)
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
