use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use icl_iml::effects::GridStrategy;
use icl_iml::export::write_csv_file;
use icl_iml::harness::records::OutputFormat;
use icl_iml::harness::{
    load_csv, run_benchmark, run_explain, BackendSpec, DataSource, ExperimentConfig, ExperimentKind, ExplainMethod,
    RunReport, SynthSpec, SynthTask,
};
use icl_iml::predictor::wire::{serve, DEFAULT_MAX_CONTEXT};
use icl_iml::predictor::DEFAULT_BANDWIDTH;
use icl_iml::{Backend, ConstantBackend, Error, ReferenceBackend, Result};

/// Interpretability methods and benchmarks for in-context tabular classifiers.
#[derive(Debug, Parser)]
#[command(name = "icl-iml", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// TOML experiment config; flags given here override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    backend: Option<BackendKind>,
    /// Predictor command line, split with shell quoting rules.
    #[arg(long, global = true, allow_hyphen_values = true)]
    external_cmd: Option<String>,
    /// Reference backend kernel bandwidth.
    #[arg(long, global = true)]
    bandwidth: Option<f64>,
    /// Seeds, comma separated or repeated.
    #[arg(long, global = true, value_delimiter = ',')]
    seed: Vec<u64>,
    #[arg(long, global = true, default_value = "results")]
    out_dir: PathBuf,
    /// log_loss, brier or one_minus_auc.
    #[arg(long, global = true)]
    risk: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendKind {
    Reference,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for OutputFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run explanation methods on one dataset.
    Explain(ExplainArgs),
    /// Batched against naive partial dependence runtime.
    BenchPd(BenchPdArgs),
    /// Kernel SHAP error against token budget.
    BenchShap(BenchShapArgs),
    /// Data-Shapley context selection against random sketches.
    BenchContext(BenchContextArgs),
    /// Write a synthetic dataset as CSV.
    Synth(SynthArgs),
    /// Serve a built-in predictor over the wire protocol on stdin/stdout.
    #[command(hide = true)]
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV dataset; synthetic data is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "label")]
    label_column: String,
    /// Synthetic task when no CSV is given.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    noise_rate: Option<f64>,
}

#[derive(Debug, Args)]
struct ExplainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated subset of: ice, pd, ale, kernel_shap, loco, sage, loo, data_shapley, sensitivity.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Coalitions for Kernel SHAP and SAGE.
    #[arg(long)]
    samples: Option<usize>,
    /// Imputations per coalition; -1 retrains exactly.
    #[arg(long, allow_hyphen_values = true)]
    imputations: Option<i64>,
    #[arg(long)]
    grid_size: Option<usize>,
    /// unique, quantile or uniform.
    #[arg(long)]
    grid_strategy: Option<String>,
    /// Feature indices for effect curves.
    #[arg(long, value_delimiter = ',')]
    features: Vec<usize>,
    #[arg(long)]
    n_sub: Option<usize>,
    #[arg(long)]
    max_local_rows: Option<usize>,
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Debug, Args)]
struct BenchPdArgs {
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    grid_sizes: Vec<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Debug, Args)]
struct BenchShapArgs {
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_inf: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    m_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    l_grid: Vec<usize>,
}

#[derive(Debug, Args)]
struct BenchContextArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_sub: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    size_min: Option<usize>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value = "noisy_linear")]
    task: String,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    p: usize,
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "synth.csv")]
    output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MockKind {
    Reference,
    Constant,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, value_enum, default_value_t = MockKind::Reference)]
    mock: MockKind,
    #[arg(long, default_value_t = DEFAULT_MAX_CONTEXT)]
    max_context: usize,
}

fn experiment_of(command: &Command) -> Option<ExperimentKind> {
    match command {
        Command::Explain(_) => Some(ExperimentKind::Explain),
        Command::BenchPd(_) => Some(ExperimentKind::PdRuntime),
        Command::BenchShap(_) => Some(ExperimentKind::ShapError),
        Command::BenchContext(_) => Some(ExperimentKind::ContextOpt),
        Command::Synth(_) | Command::Serve(_) => None,
    }
}

fn base_config(global: &Global, kind: ExperimentKind) -> Result<ExperimentConfig> {
    let mut config = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            let config = ExperimentConfig::from_toml(&text)?;
            if config.experiment != kind {
                return Err(Error::Config(format!(
                    "config file describes '{}' but the command runs '{}'",
                    config.experiment.as_str(),
                    kind.as_str()
                )));
            }
            config
        }
        None => ExperimentConfig::new(kind),
    };
    if !global.seed.is_empty() {
        config.seeds = global.seed.clone();
    }
    if let Some(risk) = &global.risk {
        config.risk = risk.parse()?;
    }
    config.backend = backend_spec(global, config.backend)?;
    Ok(config)
}

fn backend_spec(global: &Global, current: BackendSpec) -> Result<BackendSpec> {
    let command = global
        .external_cmd
        .as_deref()
        .map(|c| shlex::split(c).ok_or_else(|| Error::Config(format!("cannot split command '{c}'"))))
        .transpose()?;
    let kind = global.backend.unwrap_or(match (&current, &command) {
        (_, Some(_)) | (BackendSpec::External { .. }, None) => BackendKind::External,
        (BackendSpec::Reference { .. }, None) => BackendKind::Reference,
    });
    match kind {
        BackendKind::Reference => {
            if command.is_some() {
                return Err(Error::Config("--external-cmd conflicts with --backend reference".into()));
            }
            let bandwidth = match (global.bandwidth, &current) {
                (Some(b), _) => b,
                (None, BackendSpec::Reference { bandwidth }) => *bandwidth,
                (None, _) => DEFAULT_BANDWIDTH,
            };
            Ok(BackendSpec::Reference { bandwidth })
        }
        BackendKind::External => {
            if global.bandwidth.is_some() {
                return Err(Error::Config("--bandwidth applies to the reference backend only".into()));
            }
            match (command, current) {
                (Some(command), BackendSpec::External { timeout_secs, .. }) => {
                    Ok(BackendSpec::External { command, timeout_secs })
                }
                (Some(command), _) => Ok(BackendSpec::External { command, timeout_secs: None }),
                (None, spec @ BackendSpec::External { .. }) => Ok(spec),
                (None, _) => Err(Error::Config("--backend external needs --external-cmd".into())),
            }
        }
    }
}

fn apply_data(config: &mut ExperimentConfig, args: &DataArgs) -> Result<()> {
    if let Some(path) = &args.data {
        if args.task.is_some() || args.noise_rate.is_some() {
            return Err(Error::Config("--data conflicts with --task and --noise-rate".into()));
        }
        config.data = DataSource::Csv { path: path.clone(), label_column: args.label_column.clone() };
        return Ok(());
    }
    if args.task.is_none() && args.noise_rate.is_none() {
        return Ok(());
    }
    let (task, noise) = match &config.data {
        DataSource::Synthetic { task, noise_rate, .. } => (*task, *noise_rate),
        DataSource::Csv { .. } => (SynthTask::NoisyLinear, 0.0),
    };
    let task = args.task.as_deref().map(str::parse).transpose()?.unwrap_or(task);
    config.data = DataSource::synthetic(task, args.noise_rate.unwrap_or(noise));
    Ok(())
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_list<T: Clone>(slot: &mut Vec<T>, values: &[T]) {
    if !values.is_empty() {
        *slot = values.to_vec();
    }
}

fn print_report(report: &RunReport, files: &[PathBuf]) {
    for f in files {
        println!("wrote {}", f.display());
    }
    for c in &report.checks {
        println!("[{}] {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
}

/// Returns whether every check passed.
fn bench(config: ExperimentConfig, global: &Global) -> Result<bool> {
    config.validate()?;
    let report = run_benchmark(&config)?;
    let files = report.write(&global.out_dir, global.format.into())?;
    print_report(&report, &files);
    Ok(report.checks.iter().all(|c| c.passed))
}

/// `Ok(false)` when a benchmark check failed.
fn run(cli: Cli) -> Result<bool> {
    let global = &cli.global;
    let kind = experiment_of(&cli.command);
    match cli.command {
        Command::Explain(args) => {
            let mut config = base_config(global, kind.expect("explain"))?;
            apply_data(&mut config, &args.data)?;
            let ex = &mut config.explain;
            if !args.methods.is_empty() {
                ex.methods = args.methods.iter().map(|m| m.parse()).collect::<Result<Vec<ExplainMethod>>>()?;
            }
            set(&mut ex.samples, args.samples);
            set(&mut ex.imputations, args.imputations);
            set(&mut ex.grid_size, args.grid_size);
            set(&mut ex.grid_strategy, args.grid_strategy.as_deref().map(str::parse::<GridStrategy>).transpose()?);
            set_list(&mut ex.features, &args.features);
            if args.n_sub.is_some() {
                ex.n_sub = args.n_sub;
            }
            set(&mut ex.max_local_rows, args.max_local_rows);
            set(&mut ex.train_fraction, args.train_fraction);
            config.validate()?;
            let backend = config.backend.build()?;
            let manifest = run_explain(&config, backend, None, &global.out_dir, global.format.into())?;
            for e in &manifest.entries {
                match &e.skipped {
                    Some(reason) if e.files.is_empty() => println!("{}: skipped ({reason})", e.method),
                    _ => println!("{}: {}", e.method, e.files.join(", ")),
                }
            }
            println!("wrote {}", global.out_dir.join("manifest.json").display());
            Ok(true)
        }
        Command::BenchPd(args) => {
            let mut config = base_config(global, kind.expect("bench-pd"))?;
            let pd = &mut config.pd_runtime;
            set_list(&mut pd.sizes, &args.sizes);
            set_list(&mut pd.grid_sizes, &args.grid_sizes);
            set(&mut pd.p, args.p);
            set(&mut pd.repetitions, args.repetitions);
            bench(config, global)
        }
        Command::BenchShap(args) => {
            let mut config = base_config(global, kind.expect("bench-shap"))?;
            let se = &mut config.shap_error;
            set(&mut se.n_train, args.n_train);
            set(&mut se.n_inf, args.n_inf);
            set(&mut se.p, args.p);
            set_list(&mut se.m_grid, &args.m_grid);
            set_list(&mut se.l_grid, &args.l_grid);
            bench(config, global)
        }
        Command::BenchContext(args) => {
            let mut config = base_config(global, kind.expect("bench-context"))?;
            apply_data(&mut config, &args.data)?;
            let co = &mut config.context_opt;
            set(&mut co.n_train, args.n_train);
            set(&mut co.n_sub, args.n_sub);
            set(&mut co.n_val, args.n_val);
            set(&mut co.n_test, args.n_test);
            if args.size_min.is_some() {
                co.size_min = args.size_min;
            }
            bench(config, global)
        }
        Command::Synth(args) => synth(global, &args).map(|()| true),
        Command::Serve(args) => {
            let backend: Arc<dyn Backend> = match args.mock {
                MockKind::Reference => Arc::new(ReferenceBackend::new(global.bandwidth.unwrap_or(DEFAULT_BANDWIDTH))?),
                MockKind::Constant => Arc::new(ConstantBackend(0.5)),
            };
            serve(backend.as_ref(), BufReader::new(io::stdin().lock()), io::stdout().lock(), args.max_context)?;
            Ok(true)
        }
    }
}

fn synth(global: &Global, args: &SynthArgs) -> Result<()> {
    if global.format != Format::Csv {
        return Err(Error::Config("synth writes CSV only".into()));
    }
    let seed = match global.seed.as_slice() {
        [] => 0,
        [s] => *s,
        _ => return Err(Error::Config("synth takes a single --seed".into())),
    };
    let spec = SynthSpec { n: args.n, p: args.p, task: args.task.parse()?, noise_rate: args.noise_rate, seed };
    let data = icl_iml::harness::synth_generate(&spec)?;
    std::fs::create_dir_all(&global.out_dir)?;
    let path = global.out_dir.join(&args.output);
    write_csv_file(&data, &path)?;
    // Round trip through the loader so the file is known to be readable.
    load_csv(Path::new(&path), "label")?;
    println!("wrote {}", path.display());
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Transport(_) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
