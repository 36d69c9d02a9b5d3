use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mtda::af_ema::NormScope;
use mtda::harness::{
    ablate, emit_plots, evaluate_checkpoint, load_benchmark, order_study, save_benchmark, train, ExperimentConfig,
    RunLog,
};
use mtda::scenegen::{build_benchmark, Benchmark, STREET_CLASSES};
use mtda::segnet::save_checkpoint;
use mtda::{Error, Result};

#[derive(Parser)]
#[command(name = "mtda", version, about = "Multi-target domain adaptation on synthetic street scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark and write it as binary dataset files.
    Gen {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one configuration; writes checkpoint, event log and report.
    Train {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint's teacher on every target validation split.
    Eval {
        #[command(flatten)]
        setup: Setup,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the report as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the four cumulative component settings.
    Ablate {
        #[command(flatten)]
        setup: Setup,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once per target order.
    OrderStudy {
        #[command(flatten)]
        setup: Setup,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        /// Orders as `a>b`, separated by `;`. Defaults to all permutations.
        #[arg(long)]
        orders: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw mIoU curves from one or more event logs.
    Plot {
        /// Event logs; the file stem labels each line.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Small network and short schedule for a single CPU core.
    Desk,
    /// Library defaults.
    Reference,
}

#[derive(Args)]
struct Setup {
    /// JSON experiment configuration; missing fields take preset values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    /// Read datasets written by `gen` instead of generating them.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    targets: Option<usize>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    base_lr: Option<f64>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    n_aug: Option<usize>,
    #[arg(long)]
    ema_alpha: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    warmup_iters: Option<usize>,
    #[arg(long)]
    fisher_cap: Option<usize>,
    #[arg(long, value_enum)]
    fisher_norm_scope: Option<NormScope>,
    #[arg(long, value_delimiter = ',')]
    domain_order: Option<Vec<String>>,
    #[arg(long)]
    ods: Option<bool>,
    #[arg(long)]
    af_ema: Option<bool>,
    #[arg(long)]
    cgmix: Option<bool>,
    #[arg(long)]
    l_unsup: Option<bool>,
    #[arg(long)]
    conf_weighting: Option<bool>,
}

impl Setup {
    fn config(&self) -> Result<ExperimentConfig> {
        let base = match self.preset {
            Preset::Desk => ExperimentConfig::desk(),
            Preset::Reference => ExperimentConfig::default(),
        };
        let mut c = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let patch: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let mut merged = serde_json::to_value(&base)?;
                merge(&mut merged, patch);
                serde_json::from_value(merged).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => base,
        };
        if let Some(k) = self.targets {
            c.generator = mtda::scenegen::GeneratorConfig {
                targets: mtda::scenegen::GeneratorConfig::street(k).targets,
                ..c.generator
            };
        }
        set(&mut c.seed, self.seed);
        set(&mut c.optim.max_iter, self.max_iter);
        set(&mut c.batch_size, self.batch_size);
        set(&mut c.optim.base_lr, self.base_lr);
        set(&mut c.lambda1, self.lambda1);
        set(&mut c.lambda2, self.lambda2);
        set(&mut c.mix.n_aug, self.n_aug);
        set(&mut c.ema_alpha, self.ema_alpha);
        set(&mut c.eval_every, self.eval_every);
        set(&mut c.warmup_iters, self.warmup_iters);
        set(&mut c.fisher_norm_scope, self.fisher_norm_scope);
        set(&mut c.toggles.ods, self.ods);
        set(&mut c.toggles.af_ema, self.af_ema);
        set(&mut c.toggles.cgmix, self.cgmix);
        set(&mut c.toggles.l_unsup, self.l_unsup);
        set(&mut c.toggles.conf_weighting, self.conf_weighting);
        if let Some(cap) = self.fisher_cap {
            c.fisher_cap = Some(cap);
        }
        if let Some(order) = &self.domain_order {
            c.domain_order = Some(order.clone());
        }
        c.validate()?;
        Ok(c)
    }

    fn benchmark(&self, config: &ExperimentConfig) -> Result<Benchmark> {
        match &self.data {
            Some(dir) => load_benchmark(dir),
            None => build_benchmark(&config.generator),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn class_names(n: usize) -> Vec<String> {
    (0..n)
        .map(|c| STREET_CLASSES.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string()))
        .collect()
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { setup, out } => {
            let config = setup.config()?;
            let bench = build_benchmark(&config.generator)?;
            for p in save_benchmark(&out, &bench)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Train { setup, out } => {
            let config = setup.config()?;
            let bench = setup.benchmark(&config)?;
            fs::create_dir_all(&out)?;
            config.save(&out.join("config.json"))?;
            let run = train(&config, &bench)?;
            save_checkpoint(&out.join("checkpoint.odbc"), &run.checkpoint)?;
            run.log.write(&out.join("log.jsonl"))?;
            let csv = run.summary.to_csv(&class_names(config.model.num_classes));
            write(&out.join("eval.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Eval { setup, checkpoint, csv } => {
            let config = setup.config()?;
            let bench = setup.benchmark(&config)?;
            let vals: Vec<_> = bench.targets.iter().map(|t| &t.val).collect();
            let summary = evaluate_checkpoint(&checkpoint, &vals)?;
            let text = summary.to_csv(&class_names(bench.source.val.num_classes()));
            print!("{text}");
            if let Some(p) = csv {
                write(&p, &text)?;
            }
        }
        Command::Ablate { setup, seeds, out } => {
            let config = setup.config()?;
            let bench = setup.benchmark(&config)?;
            fs::create_dir_all(&out)?;
            let report = ablate(&config, &bench, &seeds)?;
            for (row, seed, log) in &report.logs {
                log.write(&out.join(format!("{}_seed{seed}.jsonl", file_label(row))))?;
            }
            let first = seeds[0];
            let runs: Vec<(String, &RunLog)> = report
                .logs
                .iter()
                .filter(|(_, s, _)| *s == first)
                .map(|(r, _, l)| (r.clone(), l))
                .collect();
            if runs.iter().all(|(_, l)| l.eval_points().len() >= 2) {
                emit_plots(&runs, &out.join("plots"))?;
            }
            let csv = report.to_csv();
            write(&out.join("ablation.csv"), &csv)?;
            print!("{csv}");
        }
        Command::OrderStudy {
            setup,
            seeds,
            orders,
            out,
        } => {
            let config = setup.config()?;
            let bench = setup.benchmark(&config)?;
            let orders: Option<Vec<Vec<String>>> =
                orders.map(|s| s.split(';').map(|o| o.split('>').map(|d| d.trim().to_string()).collect()).collect());
            fs::create_dir_all(&out)?;
            let report = order_study(&config, &bench, orders.as_deref(), &seeds)?;
            let csv = report.to_csv();
            write(&out.join("orders.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Plot { logs, out } => {
            let loaded = logs
                .iter()
                .map(|p| {
                    let label = p.file_stem().map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned());
                    RunLog::read(p).map(|l| (label, l))
                })
                .collect::<Result<Vec<_>>>()?;
            let runs: Vec<(String, &RunLog)> = loaded.iter().map(|(n, l)| (n.clone(), l)).collect();
            for p in emit_plots(&runs, &out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn file_label(row: &str) -> String {
    let s: String = row
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
        .collect();
    s.trim_matches('_').to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
