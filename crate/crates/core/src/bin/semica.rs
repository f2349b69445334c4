use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semica::experiments::{self, ExperimentConfig, Row, RunMetadata, TARGET_SUBSET_RULE};
use semica::recovery::{evaluate, recover_exact, recover_pipeline, RecoveryOptions};
use semica::simulator::{random_model, Dataset, DEFAULT_INTERVENTION_MULTIPLIER};
use semica::{Error, SemIcaModel};

#[derive(Parser)]
#[command(
    name = "semica",
    version,
    about = "Causal discovery with latent confounders from interventions"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML or JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Use population matrices instead of sampled data.
    #[arg(long)]
    exact_moments: bool,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    /// Comma-separated sample counts.
    #[arg(long = "n-grid", value_delimiter = ',')]
    n_grid: Option<Vec<usize>>,
    /// Comma-separated seeds; `--seed` selects a single one.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long = "noise-std")]
    noise_std: Option<f64>,
    #[arg(long = "m-assumed")]
    m_assumed: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Draw a random valid model and write it as JSON.
    GenModel(Common),
    /// Draw observational and interventional datasets from a model.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        /// Comma-separated intervened variables; all by default.
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<usize>>,
        #[arg(long, default_value_t = DEFAULT_INTERVENTION_MULTIPLIER)]
        multiplier: f64,
    },
    /// Recover (A, B) from a directory written by `simulate`, or from a
    /// model's population matrices with `--exact-moments`.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Ground truth, for metrics or exact moments.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Excess kurtosis of the latents; estimated when absent.
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Error against sample size.
    Sweep(Common),
    /// Error against the number of intervened variables.
    AblateInterventions(Common),
    /// Error against the assumed number of latents.
    AblateLatents(Common),
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

fn load_config(c: &Common) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p).map_err(|e| match e {
            Error::Io(io) => config_err(format!("{}: {io}", p.display())),
            other => other,
        })?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = c.n {
        cfg.n = v;
    }
    if let Some(v) = c.m {
        cfg.m = v;
    }
    if let Some(v) = c.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = &c.n_grid {
        cfg.n_grid = v.clone();
    }
    if let Some(v) = &c.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = c.seed {
        cfg.seeds = vec![v];
    }
    if let Some(v) = c.noise_std {
        cfg.noise_std = v;
    }
    if let Some(v) = c.m_assumed {
        cfg.m_assumed = Some(v);
    }
    if let Some(v) = c.jobs {
        cfg.jobs = v;
    }
    if let Some(v) = &c.out {
        cfg.output_path = Some(v.clone());
    }
    cfg.exact_moments |= c.exact_moments;
    cfg.validate()?;
    Ok(cfg)
}

// A closed pipe on stdout is not an error.
fn print_stdout(text: &str) -> Result<(), Error> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<(), Error> {
    let mut text = text.to_string();
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match path {
        Some(p) => Ok(std::fs::write(p, text)?),
        None => print_stdout(&text),
    }
}

fn read_model(path: &Path) -> Result<SemIcaModel, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
    SemIcaModel::from_json(&text)
}

fn gen_model(c: &Common) -> Result<(), Error> {
    let mut cfg = load_config(c)?;
    cfg.noise_std = c.noise_std.unwrap_or(cfg.noise_std);
    let seed = c.seed.unwrap_or(cfg.seeds[0]);
    let model = random_model(&cfg.model_spec(), seed)?;
    let report = model.validate(
        semica::model::DEFAULT_RANK_TOL,
        semica::model::DEFAULT_FAITHFULNESS_MIN,
    );
    eprintln!("{report}");
    write_or_print(c.out.as_deref(), &model.to_json()?)
}

fn dataset_paths(dir: &Path, target: Option<usize>) -> (PathBuf, PathBuf) {
    let stem = match target {
        None => "obs".to_string(),
        Some(t) => format!("intv_{t}"),
    };
    (
        dir.join(format!("{stem}.csv")),
        dir.join(format!("{stem}.json")),
    )
}

fn simulate(
    c: &Common,
    model: &Path,
    samples: usize,
    targets: Option<&[usize]>,
    multiplier: f64,
) -> Result<(), Error> {
    let model = read_model(model)?;
    let dir = c
        .out
        .clone()
        .ok_or_else(|| config_err("--out directory is required"))?;
    if samples == 0 {
        return Err(config_err("--samples must be positive"));
    }
    let all: Vec<usize> = (0..model.n()).collect();
    let targets = targets.unwrap_or(&all);
    if let Some(&t) = targets.iter().find(|&&t| t >= model.n()) {
        return Err(config_err(format!("target {t} out of range")));
    }
    std::fs::create_dir_all(&dir)?;
    let seed = c.seed.unwrap_or(0);
    let (obs, intvs) = experiments::draw_datasets(&model, samples, seed, targets, multiplier)?;
    for d in std::iter::once(&obs).chain(&intvs) {
        let (csv, side) = dataset_paths(&dir, d.target());
        d.write_csv(&csv)?;
        d.write_sidecar(&side)?;
    }
    eprintln!(
        "wrote {} datasets of {samples} samples to {}",
        intvs.len() + 1,
        dir.display()
    );
    Ok(())
}

fn read_datasets(dir: &Path) -> Result<(Dataset, Vec<Dataset>), Error> {
    let (csv, side) = dataset_paths(dir, None);
    if !csv.exists() {
        return Err(config_err(format!("{} not found", csv.display())));
    }
    let obs = Dataset::read(&csv, &side)?;
    let mut intvs = Vec::new();
    for t in 0..obs.n_vars() {
        let (csv, side) = dataset_paths(dir, Some(t));
        if csv.exists() {
            intvs.push(Dataset::read(&csv, &side)?);
        }
    }
    Ok((obs, intvs))
}

fn recover(
    c: &Common,
    data: Option<&Path>,
    model: Option<&Path>,
    kappa: Option<f64>,
) -> Result<(), Error> {
    let model = model.map(read_model).transpose()?;
    let seed = c.seed.unwrap_or(0);
    let mut opts = RecoveryOptions {
        seed,
        kappa,
        ..RecoveryOptions::default()
    };
    if let Some(r) = c.restarts {
        opts.restarts = r;
    }
    let mut res = if c.exact_moments {
        let model = model
            .as_ref()
            .ok_or_else(|| config_err("--exact-moments needs --model"))?;
        recover_exact(model, &opts, seed)?
    } else {
        let dir = data.ok_or_else(|| config_err("--data directory is required"))?;
        let (obs, intvs) = read_datasets(dir)?;
        let m = c
            .m_assumed
            .or(c.m)
            .or(model.as_ref().map(|md| md.m()))
            .ok_or_else(|| config_err("--m is required without --model"))?;
        recover_pipeline(&obs, &intvs, m, &opts)?
    };
    if let Some(model) = &model {
        res.metrics = Some(evaluate(model, &res)?);
    }
    write_or_print(c.out.as_deref(), &res.to_json()?)
}

fn grid(
    command: &str,
    c: &Common,
    run: fn(&ExperimentConfig) -> Result<Vec<Row>, Error>,
) -> Result<(), Error> {
    let cfg = load_config(c)?;
    let rows = run(&cfg)?;
    let errors = rows.iter().filter(|r| r.is_error()).count();
    match &cfg.output_path {
        Some(p) => {
            experiments::write_csv(&rows, p)?;
            let meta = RunMetadata {
                command,
                config: &cfg,
                target_subsets: TARGET_SUBSET_RULE,
                rows: rows.len(),
                error_rows: errors,
            };
            experiments::write_metadata(&meta, p)?;
            eprintln!(
                "wrote {} rows ({errors} errors) to {}",
                rows.len(),
                p.display()
            );
        }
        None => print_stdout(&experiments::rows_to_csv(&rows)?)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::GenModel(c) => gen_model(c),
        Cmd::Simulate {
            common,
            model,
            samples,
            targets,
            multiplier,
        } => simulate(common, model, *samples, targets.as_deref(), *multiplier),
        Cmd::Recover {
            common,
            data,
            model,
            kappa,
        } => recover(common, data.as_deref(), model.as_deref(), *kappa),
        Cmd::Sweep(c) => grid("sweep", c, experiments::sweep),
        Cmd::AblateInterventions(c) => {
            grid("ablate-interventions", c, experiments::ablate_interventions)
        }
        Cmd::AblateLatents(c) => grid("ablate-latents", c, experiments::ablate_latents),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
