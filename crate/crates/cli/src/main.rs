//! `pst`: denoise permuted smooth tensors, run simulation benchmarks, and
//! move tensors between CSV and the PSTN binary format.
//!
//! Exit codes: 0 on success; on failure a machine-parsable line
//! `error[<category>]: <message>` goes to stderr and the code identifies the
//! category (see `exit_code`).

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pst_core::baselines::{constant_block_lse, exhaustive_lse, SpectralConfig, ThresholdRule};
use pst_core::borda::{borda_denoise, cross_validate, PermutationStrategy};
use pst_core::error::{Error, Result};
use pst_core::experiments::{
    emit_report_file, export_csv, ingest_csv, run_simulation, ExperimentConfig, FillPolicy,
    Method, ModelSpec, ReportFormat, Transform,
};
use pst_core::models::{NoiseKind, NoiseSpec};
use pst_core::pstn;
use pst_core::tensor::ModePermutations;

#[derive(Parser)]
#[command(name = "pst", version, about = "Permuted smooth tensor estimation")]
struct Cli {
    /// Master seed for all randomized procedures (default 0; for `simulate`
    /// it overrides the config's master_seed when given).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a config-driven simulation sweep and write a metrics report.
    Simulate(SimulateArgs),
    /// Two-stage denoising of a PSTN tensor.
    Denoise(DenoiseArgs),
    /// Cross-validate block counts and degree on a PSTN tensor.
    Cv(CvArgs),
    /// Exhaustive least-squares search (tiny symmetric tensors only).
    Oracle(OracleArgs),
    /// Baseline estimators: spectral thresholding or constant blocks.
    Baseline(BaselineArgs),
    /// Build a PSTN tensor from CSV rows of indices and values.
    Ingest(IngestArgs),
    /// Dump a PSTN tensor's observed entries to CSV.
    Export(ExportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON experiment config (see README for the schema). Alternatively,
    /// describe the experiment inline with the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Builtin model id 1..=5 (inline setup).
    #[arg(long, conflicts_with = "config")]
    model: Option<u8>,
    /// Use the symmetric builtin table (default for inline setup).
    #[arg(long, conflicts_with = "nonsymmetric")]
    symmetric: bool,
    /// Use the non-symmetric builtin table.
    #[arg(long)]
    nonsymmetric: bool,
    /// Custom generative function, e.g. `x*y + z` (inline setup).
    #[arg(long, conflicts_with_all = ["config", "model"])]
    expression: Option<String>,
    /// Tensor dims for the inline setup, e.g. `30,40,50`.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// Noise kind for the inline setup.
    #[arg(long, value_enum, default_value_t = NoiseArg::Gaussian)]
    noise: NoiseArg,
    #[arg(long, default_value_t = 0.5)]
    sigma: f64,
    /// Methods for the inline setup.
    #[arg(long, value_delimiter = ',', default_value = "borda")]
    methods: Vec<String>,
    #[arg(long, default_value = "1:15")]
    kgrid: String,
    #[arg(long, default_value = "0:3")]
    lgrid: String,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct DenoiseArgs {
    #[arg(long)]
    input: PathBuf,
    /// Per-mode block counts, e.g. `6,4,10`, or a single count for all modes.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    degree: usize,
    /// Estimate aligned with the input tensor (Theta-hat o pi-hat), as PSTN.
    #[arg(long)]
    out: PathBuf,
    /// Estimated permutations as JSON.
    #[arg(long)]
    perm_out: Option<PathBuf>,
    /// Signal estimate in the sorted frame (Theta-hat), as PSTN.
    #[arg(long)]
    sorted_out: Option<PathBuf>,
    /// Fitted block-polynomial model as JSON.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
}

#[derive(Args)]
struct CvArgs {
    #[arg(long)]
    input: PathBuf,
    /// Block grid: `lo:hi` (inclusive) or a comma list, shared by all modes.
    #[arg(long, default_value = "2:12")]
    kgrid: String,
    /// Degree grid: `lo:hi` (inclusive) or a comma list.
    #[arg(long, default_value = "0:3")]
    lgrid: String,
    #[arg(long, default_value_t = 0.2)]
    holdout: f64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Plan and full cv table as JSON.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    input: PathBuf,
    /// Shared block count (scalar) or per-mode comma list.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    degree: usize,
    /// Globally optimal estimate aligned with the input, as PSTN.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    perm_out: Option<PathBuf>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long, value_enum)]
    method: BaselineMethod,
    #[arg(long)]
    input: PathBuf,
    /// Unfolding mode for the spectral method.
    #[arg(long, default_value_t = 1)]
    mode: usize,
    /// Fixed singular-value cutoff; defaults to the data-driven rule.
    #[arg(long)]
    threshold: Option<f64>,
    /// Per-mode block counts for the constant-block method.
    #[arg(long, value_delimiter = ',')]
    k: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    /// Tensor dims, e.g. `24,77,32`.
    #[arg(long, value_delimiter = ',')]
    dims: Vec<usize>,
    /// 1-based CSV columns holding the mode indices.
    #[arg(long, value_delimiter = ',')]
    mode_cols: Vec<usize>,
    /// 1-based CSV column holding the value.
    #[arg(long)]
    value_col: usize,
    #[arg(long, value_enum, default_value_t = TransformArg::None)]
    transform: TransformArg,
    #[arg(long, value_enum, default_value_t = FillArg::Mask)]
    fill: FillArg,
    /// Treat the first CSV row as a header.
    #[arg(long)]
    headers: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    headers: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Shared,
    PerMode,
}

impl From<StrategyArg> for PermutationStrategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Shared => PermutationStrategy::Shared,
            StrategyArg::PerMode => PermutationStrategy::PerMode,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformArg {
    None,
    Log1p,
}

#[derive(Clone, Copy, ValueEnum)]
enum FillArg {
    Mask,
    Zero,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMethod {
    Spectral,
    Blocklse,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Gaussian,
    Bernoulli,
    None,
}

fn exit_code(err: &Error) -> u8 {
    match err.category() {
        "invalid-argument" => 2,
        "shape" => 3,
        "permutation" => 4,
        "mode" => 5,
        "domain" => 6,
        "data" => 7,
        "refused" => 8,
        "format" => 9,
        _ => 10, // io
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        // The global pool can only be built once per process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error[{}]: {}", err.category(), err);
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(args) => simulate(args, cli.seed),
        Command::Denoise(args) => denoise(args),
        Command::Cv(args) => cv(args, cli.seed),
        Command::Oracle(args) => oracle(args),
        Command::Baseline(args) => baseline(args, cli.seed),
        Command::Ingest(args) => ingest(args),
        Command::Export(args) => export(args),
    }
}

fn parse_grid(spec: &str) -> Result<Vec<usize>> {
    let spec = spec.trim();
    if let Some((lo, hi)) = spec.split_once(':') {
        let lo: usize = lo
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad grid bound {lo:?}")))?;
        let hi: usize = hi
            .trim()
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("bad grid bound {hi:?}")))?;
        if lo > hi {
            return Err(Error::InvalidArgument(format!(
                "grid {spec:?} has lo > hi"
            )));
        }
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|tok| {
            tok.trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad grid entry {tok:?}")))
        })
        .collect()
}

fn expand_blocks(k: &[usize], order: usize) -> Result<Vec<usize>> {
    match k.len() {
        0 => Err(Error::InvalidArgument("missing --k".into())),
        1 => Ok(vec![k[0]; order]),
        n if n == order => Ok(k.to_vec()),
        n => Err(Error::InvalidArgument(format!(
            "{n} block counts for an order-{order} tensor"
        ))),
    }
}

fn default_strategy(dims: &[usize]) -> PermutationStrategy {
    if dims.iter().all(|&d| d == dims[0]) {
        PermutationStrategy::Shared
    } else {
        PermutationStrategy::PerMode
    }
}

fn write_perms(path: &PathBuf, perms: &ModePermutations) -> Result<()> {
    let file = File::create(path)?;
    serde_json::to_writer_pretty(BufWriter::new(file), perms)
        .map_err(|e| Error::Data(format!("cannot write permutations: {e}")))?;
    Ok(())
}

fn simulate(args: SimulateArgs, seed: Option<u64>) -> Result<()> {
    let mut cfg: ExperimentConfig = match &args.config {
        Some(path) => {
            let file = File::open(path)?;
            serde_json::from_reader(file)
                .map_err(|e| Error::Data(format!("bad experiment config: {e}")))?
        }
        None => inline_config(&args)?,
    };
    if let Some(s) = seed {
        cfg.master_seed = s;
    }
    let report = run_simulation(&cfg)?;
    let format = match args.format {
        FormatArg::Csv => ReportFormat::Csv,
        FormatArg::Json => ReportFormat::Json,
    };
    emit_report_file(&report, format, &args.out)?;
    let best: Vec<String> = report
        .summary
        .iter()
        .filter(|s| s.best)
        .map(|s| format!("{}: mse {:.6e} (se {:.1e})", s.method, s.mean_mse, s.mse_stderr))
        .collect();
    println!("wrote {}; best cells: {}", args.out.display(), best.join("; "));
    Ok(())
}

fn inline_config(args: &SimulateArgs) -> Result<ExperimentConfig> {
    if args.dims.is_empty() {
        return Err(Error::InvalidArgument(
            "inline simulation needs --dims (or use --config)".into(),
        ));
    }
    let model = match (&args.expression, args.model) {
        (Some(expression), _) => ModelSpec::Custom {
            expression: expression.clone(),
            arity: args.dims.len(),
        },
        (None, Some(id)) => ModelSpec::Builtin {
            id,
            symmetric: !args.nonsymmetric,
        },
        (None, None) => {
            return Err(Error::InvalidArgument(
                "inline simulation needs --model or --expression (or use --config)".into(),
            ))
        }
    };
    let kind = match args.noise {
        NoiseArg::Gaussian => NoiseKind::Gaussian,
        NoiseArg::Bernoulli => NoiseKind::Bernoulli,
        NoiseArg::None => NoiseKind::None,
    };
    let methods = args
        .methods
        .iter()
        .map(|m| m.parse())
        .collect::<Result<Vec<Method>>>()?;
    let min_dim = *args.dims.iter().min().unwrap();
    Ok(ExperimentConfig {
        model,
        dims: args.dims.clone(),
        noise: NoiseSpec {
            kind,
            sigma: args.sigma,
            seed: 0,
        },
        methods,
        k_grid: parse_grid(&args.kgrid)?
            .into_iter()
            .filter(|&k| k >= 1 && k <= min_dim)
            .collect(),
        l_grid: parse_grid(&args.lgrid)?,
        replicates: args.replicates,
        master_seed: 0,
        strategy: None,
        spectral_mode: 1,
        spectral_grid: 25,
    })
}

fn denoise(args: DenoiseArgs) -> Result<()> {
    let y = pstn::read_tensor_file(&args.input)?;
    let blocks = expand_blocks(&args.k, y.order())?;
    let strategy = args
        .strategy
        .map(Into::into)
        .unwrap_or_else(|| default_strategy(y.dims()));
    let fit = borda_denoise(&y, &blocks, args.degree, strategy)?;
    pstn::write_tensor_file(&args.out, &fit.estimate_in_observation_order()?)?;
    if let Some(path) = &args.sorted_out {
        pstn::write_tensor_file(path, &fit.estimate)?;
    }
    if let Some(path) = &args.model_out {
        let file = File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), &fit.model)
            .map_err(|e| Error::Data(format!("cannot write model: {e}")))?;
    }
    if let Some(path) = &args.perm_out {
        write_perms(path, &fit.perms)?;
    }
    println!(
        "wrote {}; objective (rss on sorted observation) = {:.6e}",
        args.out.display(),
        fit.objective
    );
    Ok(())
}

fn cv(args: CvArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let y = pstn::read_tensor_file(&args.input)?;
    let min_dim = *y.dims().iter().min().unwrap();
    let k_grid: Vec<Vec<usize>> = parse_grid(&args.kgrid)?
        .into_iter()
        .filter(|&k| k >= 1 && k <= min_dim)
        .map(|k| y.dims().iter().map(|&d| k.min(d)).collect())
        .collect();
    if k_grid.is_empty() {
        return Err(Error::InvalidArgument(
            "k grid is empty after clipping to the tensor dims".into(),
        ));
    }
    let l_grid = parse_grid(&args.lgrid)?;
    let strategy = args
        .strategy
        .map(Into::into)
        .unwrap_or_else(|| default_strategy(y.dims()));
    let (plan, table) = cross_validate(
        &y,
        &k_grid,
        &l_grid,
        args.holdout,
        args.folds,
        seed,
        strategy,
    )?;
    let file = File::create(&args.out)?;
    serde_json::to_writer_pretty(
        BufWriter::new(file),
        &serde_json::json!({
            "seed": seed,
            "holdout": args.holdout,
            "folds": args.folds,
            "plan": plan,
            "table": table,
        }),
    )
    .map_err(|e| Error::Data(format!("cannot write cv output: {e}")))?;
    println!(
        "wrote {}; selected degree {} blocks {:?}",
        args.out.display(),
        plan.degree_star,
        plan.blocks_star
    );
    Ok(())
}

fn oracle(args: OracleArgs) -> Result<()> {
    let y = pstn::read_tensor_file(&args.input)?;
    let blocks = expand_blocks(&args.k, y.order())?;
    let fit = exhaustive_lse(&y, &blocks, args.degree)?;
    pstn::write_tensor_file(&args.out, &fit.estimate_in_observation_order(y.order())?)?;
    if let Some(path) = &args.perm_out {
        let perms = ModePermutations::shared(fit.perm.clone(), y.order())?;
        write_perms(path, &perms)?;
    }
    println!(
        "wrote {}; objective = {:.6e}",
        args.out.display(),
        fit.objective
    );
    Ok(())
}

fn baseline(args: BaselineArgs, seed: Option<u64>) -> Result<()> {
    let seed = seed.unwrap_or(0);
    let y = pstn::read_tensor_file(&args.input)?;
    match args.method {
        BaselineMethod::Spectral => {
            let threshold = match args.threshold {
                Some(t) => ThresholdRule::Fixed(t),
                None => ThresholdRule::Auto,
            };
            let cfg = SpectralConfig {
                mode: args.mode,
                threshold,
            };
            let fit = pst_core::baselines::spectral_usvt(&y, &cfg, None)?;
            pstn::write_tensor_file(&args.out, &fit.estimate)?;
            println!(
                "wrote {}; threshold = {:.6e}",
                args.out.display(),
                fit.threshold
            );
        }
        BaselineMethod::Blocklse => {
            let blocks = expand_blocks(&args.k, y.order())?;
            let fit = constant_block_lse(&y, &blocks, seed)?;
            pstn::write_tensor_file(&args.out, &fit.estimate)?;
            println!("wrote {}", args.out.display());
        }
    }
    Ok(())
}

fn ingest(args: IngestArgs) -> Result<()> {
    for col in args.mode_cols.iter().chain([&args.value_col]) {
        if *col == 0 {
            return Err(Error::InvalidArgument(
                "CSV columns are 1-based; got 0".into(),
            ));
        }
    }
    let mode_cols: Vec<usize> = args.mode_cols.iter().map(|c| c - 1).collect();
    let transform = match args.transform {
        TransformArg::None => Transform::None,
        TransformArg::Log1p => Transform::Log1p,
    };
    let fill = match args.fill {
        FillArg::Mask => FillPolicy::Mask,
        FillArg::Zero => FillPolicy::Zero,
    };
    let t = ingest_csv(
        &args.input,
        &mode_cols,
        args.value_col - 1,
        transform,
        &args.dims,
        fill,
        args.headers,
    )?;
    pstn::write_tensor_file(&args.out, &t)?;
    println!(
        "wrote {}; {} of {} entries observed",
        args.out.display(),
        t.observed_count(),
        t.len()
    );
    Ok(())
}

fn export(args: ExportArgs) -> Result<()> {
    let t = pstn::read_tensor_file(&args.input)?;
    export_csv(&t, &args.out, args.headers)?;
    println!("wrote {}", args.out.display());
    Ok(())
}
