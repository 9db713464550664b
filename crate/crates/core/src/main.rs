use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use probmask::config::{ConfigFile, DatasetConfig};
use probmask::data::Dataset;
use probmask::diagnostics::{self, DiagRecord};
use probmask::io;
use probmask::mask::Layout;
use probmask::optim::Constraint;
use probmask::projection::{self, DEFAULT_TOL};
use probmask::trainer::{self, TrainMode};
use probmask::{Error, NetSpec};

/// Probabilistic masking: train sparse networks under a global weight budget.
#[derive(Debug, Parser)]
#[command(name = "probmask", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train weights and mask probabilities jointly.
    Train(RunArgs),
    /// Learn a mask over frozen Kaiming-initialized weights.
    Supermask(RunArgs),
    /// Evaluate a weight checkpoint under a mask file.
    Eval(EvalArgs),
    /// Project a vector onto {0 <= s <= 1, sum(s) <= K}.
    Project(ProjectArgs),
    /// Probability histograms, layer ratios and S-factor curves.
    Diag(DiagArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Parent directory for the run directory.
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// `mnist:<dir>` or `blobs:<seed>`.
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long, value_enum)]
    mode: Option<ModeFlag>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeFlag {
    Global,
    Layerwise,
}

impl From<ModeFlag> for Constraint {
    fn from(m: ModeFlag) -> Self {
        match m {
            ModeFlag::Global => Constraint::Global,
            ModeFlag::Layerwise => Constraint::Layerwise,
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Architecture and dataset; defaults to `config.toml` next to the weights.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
}

#[derive(Debug, Args)]
struct ProjectArgs {
    /// One float per line; in layerwise mode blank lines separate layers.
    #[arg(long)]
    input: PathBuf,
    /// Budget K (global) or remaining ratio k (layerwise).
    #[arg(long)]
    budget: f64,
    #[arg(long, value_enum, default_value = "global")]
    mode: ModeFlag,
    /// Output file; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagArgs {
    /// Probability file written by `train`.
    #[arg(long)]
    probs: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    /// Emit the S-factor curve for `s,g`, e.g. `0.99,0.04`.
    #[arg(long)]
    s_curve: Option<String>,
    #[arg(long, default_value_t = 98)]
    points: usize,
    /// Directory for CSV output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_EVAL: u8 = 4;

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_USAGE, e.to_string())
}

fn failure(e: impl std::fmt::Display) -> Failure {
    Failure::new(EXIT_FAILURE, e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_run(args, TrainMode::Prune),
        Command::Supermask(args) => cmd_run(args, TrainMode::Supermask),
        Command::Eval(args) => cmd_eval(args),
        Command::Project(args) => cmd_project(args),
        Command::Diag(args) => cmd_diag(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: &Path) -> Result<ConfigFile, Failure> {
    ConfigFile::load(path).map_err(usage)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, bytes).map_err(|e| failure(format!("writing {}: {e}", path.display())))
}

fn cmd_run(args: RunArgs, mode: TrainMode) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    cfg.train.mode = mode;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(flag) = &args.dataset {
        cfg.dataset = DatasetConfig::from_flag(flag, &cfg.dataset).map_err(usage)?;
    }
    if let Some(m) = args.mode {
        cfg.train.constraint = m.into();
    }
    let train_cfg = cfg.train_config().map_err(usage)?;
    let spec = cfg.model.build().map_err(usage)?;
    let (train_set, eval_set) = cfg.dataset.load(&spec, Path::new(".")).map_err(failure)?;

    let run_dir = args.out.join(cfg.run_name());
    if run_dir.exists() {
        return Err(failure(format!(
            "run directory {} already exists; refusing to overwrite",
            run_dir.display()
        )));
    }
    fs::create_dir_all(&run_dir).map_err(failure)?;
    write(&run_dir.join("config.toml"), cfg.canonical())?;

    let outcome = match trainer::train(&spec, &train_cfg, &train_set, eval_set.as_ref()) {
        Ok(o) => o,
        Err(Error::Diverged(dump)) => {
            write(&run_dir.join("divergence.txt"), dump.to_string())?;
            let partial = trainer::TrainReport {
                records: dump.records.clone(),
                final_remaining: f64::NAN,
            };
            write(&run_dir.join("report.csv"), partial.to_csv())?;
            return Err(Failure::new(
                EXIT_DIVERGED,
                format!(
                    "training diverged at epoch {} iteration {} (loss {}); state dumped to {}",
                    dump.epoch,
                    dump.iteration,
                    dump.loss,
                    run_dir.join("divergence.txt").display()
                ),
            ));
        }
        Err(e) => return Err(failure(e)),
    };

    let layout = Layout::from_spec(&spec);
    io::save_state(run_dir.join("init.pmw"), &spec, &outcome.init).map_err(failure)?;
    io::save_state(run_dir.join("weights.pmw"), &spec, &outcome.state).map_err(failure)?;
    io::save_probs(run_dir.join("probs.pmw"), &outcome.probs).map_err(failure)?;
    io::save_mask(run_dir.join("mask.pmsk"), &layout, &outcome.mask).map_err(failure)?;
    write(&run_dir.join("report.csv"), outcome.report.to_csv())?;

    let hist = diagnostics::prob_histogram(&outcome.probs.to_flat(), 20).map_err(failure)?;
    write(&run_dir.join("histogram.csv"), DiagRecord::Histogram(hist).to_csv())?;
    let ratios = diagnostics::layer_remaining(&layout, outcome.probs.segments()).map_err(failure)?;
    write(&run_dir.join("layer_ratio.csv"), DiagRecord::LayerRatio(ratios).to_csv())?;
    let mask_ratios = diagnostics::layer_remaining(&layout, &outcome.mask.values).map_err(failure)?;
    write(&run_dir.join("mask_layer_ratio.csv"), DiagRecord::LayerRatio(mask_ratios).to_csv())?;

    let accuracy = outcome.report.last().map_or(f64::NAN, |r| r.accuracy);
    println!("run directory: {}", run_dir.display());
    println!("final accuracy: {accuracy:.4}");
    println!(
        "remaining ratio: {:.4} (sparsity {:.4})",
        outcome.report.final_remaining,
        1.0 - outcome.report.final_remaining
    );
    Ok(())
}

/// MLP reconstructed from a checkpoint of `fcN.weight`/`fcN.bias` tensors.
fn infer_mlp(entries: &[(String, probmask::Tensor)]) -> Option<NetSpec> {
    let mut weights: Vec<(usize, &[usize])> = entries
        .iter()
        .filter_map(|(name, t)| {
            let idx = name.strip_prefix("fc")?.strip_suffix(".weight")?.parse().ok()?;
            Some((idx, t.shape()))
        })
        .collect();
    weights.sort_by_key(|w| w.0);
    let mut sizes = vec![*weights.first()?.1.get(1)?];
    for (_, shape) in &weights {
        if shape.len() != 2 || shape[1] != *sizes.last()? {
            return None;
        }
        sizes.push(shape[0]);
    }
    NetSpec::mlp(&sizes).ok()
}

fn cmd_eval(args: EvalArgs) -> Result<(), Failure> {
    let config_path = args
        .config
        .clone()
        .or_else(|| Some(args.weights.parent()?.join("config.toml")).filter(|p| p.exists()));
    let cfg = match &config_path {
        Some(p) => Some(load_config(p)?),
        None => None,
    };
    let bytes = fs::read(&args.weights).map_err(|e| failure(format!("{}: {e}", args.weights.display())))?;
    let entries = io::decode_tensors(&bytes).map_err(|e| Failure::new(EXIT_EVAL, e.to_string()))?;
    let spec = match &cfg {
        Some(c) => c.model.build().map_err(usage)?,
        None => infer_mlp(&entries)
            .ok_or_else(|| usage("cannot infer the architecture from the checkpoint; pass --config"))?,
    };
    let state = io::state_from_entries(&spec, entries).map_err(|e| Failure::new(EXIT_EVAL, e.to_string()))?;
    let (layout, mask) = io::load_mask(&args.mask).map_err(|e| match e {
        Error::Io(e) => failure(format!("{}: {e}", args.mask.display())),
        e => Failure::new(EXIT_EVAL, e.to_string()),
    })?;
    let mask = io::mask_for_spec(&spec, &layout, mask).map_err(|e| Failure::new(EXIT_EVAL, e.to_string()))?;

    let base = cfg.as_ref().map_or_else(DatasetConfig::default, |c| c.dataset.clone());
    let dataset_cfg = match &args.dataset {
        Some(flag) => DatasetConfig::from_flag(flag, &base).map_err(usage)?,
        None => base,
    };
    let (train_set, eval_set): (Dataset, Option<Dataset>) =
        dataset_cfg.load(&spec, Path::new(".")).map_err(failure)?;
    let eval_set = eval_set.unwrap_or(train_set);
    let accuracy = trainer::evaluate(&spec, &state, &mask, &eval_set)
        .map_err(|e| Failure::new(EXIT_EVAL, e.to_string()))?;

    println!("accuracy: {accuracy:.4}");
    let layout = Layout::from_spec(&spec);
    let ratios = diagnostics::layer_remaining(&layout, &mask.values).map_err(failure)?;
    println!("remaining ratio: {:.4}", mask.remaining_ratio());
    print!("{}", DiagRecord::LayerRatio(ratios).to_csv());
    Ok(())
}

fn parse_vector_file(path: &Path) -> Result<Vec<Vec<f64>>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| failure(format!("{}: {e}", path.display())))?;
    let mut layers = vec![Vec::new()];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !layers.last().unwrap().is_empty() {
                layers.push(Vec::new());
            }
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| usage(format!("{}:{}: not a number: {line:?}", path.display(), lineno + 1)))?;
        layers.last_mut().unwrap().push(v);
    }
    if layers.last().is_some_and(Vec::is_empty) {
        layers.pop();
    }
    if layers.is_empty() {
        return Err(usage(format!("{}: no values", path.display())));
    }
    Ok(layers)
}

fn format_vector(layers: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for (i, layer) in layers.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        for v in layer {
            out.push_str(&format!("{v:.16e}\n"));
        }
    }
    out
}

fn cmd_project(args: ProjectArgs) -> Result<(), Failure> {
    let layers = parse_vector_file(&args.input)?;
    let (projected, summary) = match args.mode {
        ModeFlag::Global => {
            let z: Vec<f64> = layers.concat();
            let r = projection::project_global(&z, args.budget, DEFAULT_TOL).map_err(usage)?;
            let summary = format!(
                "v_star = {:e}\nresidual = {:e}\niterations = {}",
                r.v_star, r.residual, r.iterations
            );
            (vec![r.s], summary)
        }
        ModeFlag::Layerwise => {
            let results = projection::project_layerwise(&layers, args.budget, DEFAULT_TOL).map_err(usage)?;
            let summary = results
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    format!(
                        "layer {i}: v_star = {:e}, residual = {:e}, iterations = {}",
                        r.v_star, r.residual, r.iterations
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            (results.into_iter().map(|r| r.s).collect(), summary)
        }
    };
    let text = format_vector(&projected);
    match &args.output {
        Some(path) => {
            write(path, text)?;
            println!("{summary}");
        }
        None => {
            print!("{text}");
            eprintln!("{summary}");
        }
    }
    Ok(())
}

fn emit(out: Option<&Path>, name: &str, csv: String) -> Result<(), Failure> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(failure)?;
            write(&dir.join(name), csv)
        }
        None => {
            println!("# {name}");
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_diag(args: DiagArgs) -> Result<(), Failure> {
    if args.probs.is_none() && args.s_curve.is_none() {
        return Err(usage("nothing to do: pass --probs and/or --s-curve"));
    }
    let out = args.out.as_deref();
    if let Some(path) = &args.probs {
        let s = io::load_probs(path).map_err(failure)?;
        let hist = diagnostics::prob_histogram(&s.to_flat(), args.bins).map_err(usage)?;
        let frac = hist.frac_binary;
        emit(out, "histogram.csv", DiagRecord::Histogram(hist).to_csv())?;
        let ratios = diagnostics::layer_remaining(s.layout(), s.segments()).map_err(failure)?;
        emit(out, "layer_ratio.csv", DiagRecord::LayerRatio(ratios).to_csv())?;
        eprintln!("frac_binary = {frac}");
        eprintln!("mean_s = {}", s.sum() / s.len() as f64);
    }
    if let Some(spec) = &args.s_curve {
        let (s, g) = spec
            .split_once(',')
            .and_then(|(a, b)| Some((a.trim().parse::<f64>().ok()?, b.trim().parse::<f64>().ok()?)))
            .ok_or_else(|| usage(format!("--s-curve expects s,g, got {spec:?}")))?;
        let grid = diagnostics::tau_grid(1.0, 0.03, args.points.max(2));
        let curve = diagnostics::s_factor_curve(s, g, &grid).map_err(usage)?;
        eprintln!("stationary root of y - 2y*sigmoid(y) + 1 = 0: {}", curve.stationary_root);
        emit(out, "s_curve.csv", DiagRecord::SCurve(curve).to_csv())?;
    }
    Ok(())
}
