//! Command-line front end: parse diagnostics, training, ablations, gradient
//! checks and timing profiles.
//!
//! Exit codes: 0 success, 1 usage error, 2 data-quality warnings, 3 run failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use molfuse::autodiff::gradcheck::run_suite;
use molfuse::dataset::TaskKind;
use molfuse::integration::{Batch, FusionOp, Model, ModelConfig, Sample, Strategy};
use molfuse::smiles::{corpus_smiles, parse, tokenize, Vocabulary};
use molfuse::training::{
    ablate, attention_scaling, prepare, profile, run_seeds_on, save_checkpoint, scaling_table, AblationKind,
    RunConfig, TrainError, KEYS,
};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_FAILURE: u8 = 3;

#[derive(Parser)]
#[command(name = "molfuse", version, about = "SMILES language model + message passing property prediction")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse SMILES and print atoms, bonds and tokens.
    Parse {
        smiles: Vec<String>,
        /// One SMILES per line.
        #[arg(long)]
        file: Option<PathBuf>,
        /// Also print per-atom and per-bond detail.
        #[arg(long)]
        detail: bool,
    },
    /// Train one strategy over the configured seeds.
    Train(RunArgs),
    /// Sweep split ratios, fusion operators or graph networks.
    Ablate {
        kind: AblationKind,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Finite-difference check of every op kind and every strategy.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        trials: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Per-epoch timing of the strategies and the attention scaling check.
    Profile {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated strategies (default: all seven).
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<Strategy>,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long, default_value_t = 5)]
        measured: usize,
        /// Only run the synthetic sequence-length doubling benchmark.
        #[arg(long)]
        synthetic_seq_scaling: bool,
        #[arg(long, value_delimiter = ',', default_value = "64,128,256,512")]
        lengths: Vec<usize>,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    fusion: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    gnn: Option<String>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    label_column: Option<String>,
    #[arg(long)]
    limit: Option<String>,
    /// Any other config key, as `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Run directory (default: runs/<command>-<strategy>-<dataset>).
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Run(String),
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(c) => Failure::Usage(c.to_string()),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(e.to_string())
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p).map_err(|e| Failure::Usage(e.to_string()))?;
        }
        let flags = [
            ("strategy", &self.strategy),
            ("dataset", &self.dataset),
            ("task", &self.task),
            ("fusion", &self.fusion),
            ("seeds", &self.seeds),
            ("max_epochs", &self.max_epochs),
            ("batch_size", &self.batch_size),
            ("lr", &self.lr),
            ("gnn", &self.gnn),
            ("split", &self.split),
            ("label_column", &self.label_column),
            ("limit", &self.limit),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, v).map_err(|e| Failure::Usage(e.to_string()))?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Failure::Usage(format!("--set expects key=value, got '{kv}'; valid keys: {}", KEYS.join(", "))))?;
            cfg.set(k.trim(), v).map_err(|e| Failure::Usage(e.to_string()))?;
        }
        Ok(cfg)
    }

    fn out_dir(&self, command: &str, cfg: &RunConfig) -> PathBuf {
        self.out.clone().unwrap_or_else(|| {
            let stem = cfg.dataset.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned());
            PathBuf::from("runs").join(format!("{command}-{}-{stem}", cfg.strategy))
        })
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<(), Failure> {
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn cmd_parse(smiles: Vec<String>, file: Option<PathBuf>, detail: bool) -> Result<u8, Failure> {
    let mut inputs = smiles;
    if let Some(f) = file {
        let text = fs::read_to_string(&f).map_err(|e| Failure::Usage(format!("{}: {e}", f.display())))?;
        inputs.extend(text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from));
    }
    if inputs.is_empty() {
        return Err(Failure::Usage("give SMILES arguments or --file".into()));
    }
    let vocab = Vocabulary::build(inputs.iter().map(String::as_str));
    let mut bad = 0;
    for (i, s) in inputs.iter().enumerate() {
        let result = parse(s).and_then(|g| tokenize(s, &vocab).map(|t| (g, t)));
        match result {
            Ok((g, t)) => {
                println!(
                    "{i}\t{s}\t{} atoms, {} bonds, {} tokens",
                    g.num_atoms(),
                    g.num_bonds(),
                    t.len() - 1
                );
                if detail {
                    print!("{}", g.dump());
                    println!("tokens\t{}", t.raw_tokens[1..].join(" "));
                    println!("alignment\t{:?}", t.atom_token_positions);
                }
            }
            Err(e) => {
                bad += 1;
                println!("{i}\t{s}\tquarantined: {e}");
            }
        }
    }
    println!("{} parsed, {bad} quarantined", inputs.len() - bad);
    Ok(if bad > 0 { EXIT_DATA } else { 0 })
}

fn cmd_train(args: RunArgs) -> Result<u8, Failure> {
    let cfg = args.resolve()?;
    let dir = args.out_dir("train", &cfg);
    fs::create_dir_all(&dir)?;
    write(&dir, "config.txt", &cfg.to_text())?;
    let data = prepare(&cfg)?;
    write(&dir, "quarantine.tsv", &data.loaded.quarantine_report())?;
    let (report, models) = run_seeds_on(&cfg, &data)?;
    for (m, s) in models.iter().zip(&report.seeds) {
        save_checkpoint(&dir.join(format!("checkpoint-seed{}.bin", s.seed)), m, &data.vocab)
            .map_err(|e| Failure::Run(e.to_string()))?;
    }
    let table = report.table();
    write(&dir, "report.txt", &table)?;
    write(&dir, "seeds.jsonl", &report.json_lines())?;
    write(&dir, "timings.jsonl", &report.timing_lines())?;
    print!("{table}");
    println!("run directory: {}", dir.display());
    Ok(if report.successes == 0 || report.partial {
        EXIT_FAILURE
    } else if data.quarantined() > 0 {
        EXIT_DATA
    } else {
        0
    })
}

fn cmd_ablate(kind: AblationKind, args: RunArgs) -> Result<u8, Failure> {
    let mut cfg = args.resolve()?;
    if kind == AblationKind::Fusion && args.strategy.is_none() && args.config.is_none() {
        cfg.strategy = Strategy::LateFusion;
    }
    if kind == AblationKind::Splits && args.strategy.is_none() && args.config.is_none() {
        cfg.strategy = Strategy::ContrastNode;
    }
    let dir = args.out_dir(&format!("ablate-{kind}"), &cfg);
    fs::create_dir_all(&dir)?;
    write(&dir, "config.txt", &cfg.to_text())?;
    let data = prepare(&cfg)?;
    let table = ablate(kind, &cfg, &data)?;
    let text = table.render();
    write(&dir, "table.txt", &text)?;
    write(&dir, "table.jsonl", &table.json_lines())?;
    print!("{text}");
    let failed = table.rows.iter().any(|r| r.report.partial);
    Ok(if failed { EXIT_FAILURE } else { 0 })
}

fn cmd_gradcheck(trials: usize, tolerance: f64, seed: u64) -> Result<u8, Failure> {
    let suite = run_suite(trials, tolerance, seed);
    println!("{suite}");
    let mut ok = suite.all_passed();

    let vocab = Vocabulary::build(corpus_smiles());
    let samples: Vec<Sample> = [("CC(=O)O", -0.2), ("c1ccncc1", 0.7)]
        .iter()
        .map(|(s, y)| Sample::new(s, *y, &vocab))
        .collect::<Result<_, _>>()
        .map_err(|e| Failure::Run(e.to_string()))?;
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::new(&refs, 64).map_err(|e| Failure::Run(e.to_string()))?;
    println!("{:<16}  {:<7}  {:>12}  worst parameter", "strategy", "fusion", "max rel err");
    for strategy in Strategy::ALL {
        for fusion in FusionOp::ALL {
            let joint = matches!(strategy, Strategy::LateFusion | Strategy::Mpnn2Lm | Strategy::Lm2Mpnn);
            if !joint && fusion != FusionOp::Sum {
                continue;
            }
            let mut cfg = ModelConfig::tiny(strategy, TaskKind::Regression, vocab.len());
            cfg.fusion = fusion;
            let model = Model::new(cfg, seed).map_err(|e| Failure::Run(e.to_string()))?;
            let errs = model
                .check_gradients(&batch, 6, seed)
                .map_err(|e| Failure::Run(e.to_string()))?;
            let (name, worst) = errs
                .iter()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .map(|(n, e)| (n.as_str(), *e))
                .unwrap_or(("-", 0.0));
            let pass = worst < tolerance;
            ok &= pass;
            println!(
                "{:<16}  {:<7}  {:>12.3e}  {name}{}",
                strategy.name(),
                fusion.to_string(),
                worst,
                if pass { "" } else { "  FAIL" }
            );
        }
    }
    println!("{}", if ok { "all gradients match" } else { "gradient mismatch" });
    Ok(if ok { 0 } else { EXIT_FAILURE })
}

fn cmd_profile(
    args: RunArgs,
    strategies: Vec<Strategy>,
    warmup: usize,
    measured: usize,
    synthetic: bool,
    lengths: Vec<usize>,
) -> Result<u8, Failure> {
    let cfg = args.resolve()?;
    let dir = args.out_dir("profile", &cfg);
    fs::create_dir_all(&dir)?;
    if synthetic {
        let rows = attention_scaling(&lengths, cfg.hidden_dim, 15, cfg.seeds[0])?;
        let text = scaling_table(&rows);
        let json: String = rows.iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
        write(&dir, "scaling.txt", &text)?;
        write(&dir, "scaling.jsonl", &json)?;
        print!("{text}");
        return Ok(0);
    }
    if measured == 0 {
        return Err(Failure::Usage("--measured must be at least 1".into()));
    }
    let strategies = if strategies.is_empty() { Strategy::ALL.to_vec() } else { strategies };
    write(&dir, "config.txt", &cfg.to_text())?;
    let data = prepare(&cfg)?;
    info!("profiling {} strategies", strategies.len());
    let report = profile(&cfg, &data, &strategies, warmup, measured)?;
    let text = report.table();
    write(&dir, "profile.txt", &text)?;
    write(&dir, "profile.jsonl", &report.json_lines())?;
    print!("{text}");
    Ok(0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { EXIT_USAGE } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Parse { smiles, file, detail } => cmd_parse(smiles, file, detail),
        Command::Train(args) => cmd_train(args),
        Command::Ablate { kind, run } => cmd_ablate(kind, run),
        Command::Gradcheck { trials, tolerance, seed } => cmd_gradcheck(trials, tolerance, seed),
        Command::Profile {
            run,
            strategies,
            warmup,
            measured,
            synthetic_seq_scaling,
            lengths,
        } => cmd_profile(run, strategies, warmup, measured, synthetic_seq_scaling, lengths),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Run(m)) => {
            eprintln!("run failed: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
