use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use nlreg::checks::{self, CheckOutcome};
use nlreg::datagen::{make_dataset, read_dataset_csv, write_dataset_csv, Case};
use nlreg::experiment::{
    read_weight_csv, run_experiment, run_pipeline, run_validation, write_outputs, ExperimentConfig, Setup,
};
use nlreg::fem::{ForwardSystem, Mesh1D};
use nlreg::nonlocal::{Admissible, NonlocalTensor, WeightVector};

#[derive(Parser)]
#[command(
    name = "nlreg",
    version,
    about = "Learn distance-dependent weights for nonlocal regularization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training and validation datasets.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Learn σ* and ν* per batch on a training set.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Training CSV from `generate`; generated from the config if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Average validation error of stored weights.
    Validate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Validation CSV from `generate`.
        #[arg(long)]
        data: PathBuf,
        /// Weight CSVs (t_lo,t_hi,sigma).
        #[arg(required = true)]
        weights: Vec<PathBuf>,
    },
    /// Generate data, train, validate and write the full table.
    Experiment {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Also write the generated datasets.
        #[arg(long)]
        dump_data: bool,
    },
    /// Run the numerical self-checks and print a JSON report.
    Check {
        #[arg(long, default_value_t = 9)]
        n_nodes: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.5,0.9")]
        s: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args, Default)]
struct ConfigArgs {
    /// Config file with `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    case: Option<Case>,
    /// Comma separated fractional orders.
    #[arg(long, value_delimiter = ',')]
    s: Option<Vec<f64>>,
    #[arg(long)]
    n_nodes: Option<usize>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_val: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    batch_sizes: Option<Vec<usize>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    gamma1: Option<f64>,
    #[arg(long)]
    gamma2: Option<f64>,
    /// `h`, `d` or a number.
    #[arg(long)]
    delta: Option<String>,
    /// Any config key, e.g. `--set max_inner=500`. Applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                ExperimentConfig::from_text(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(c) = self.case {
            cfg.case = c;
        }
        if let Some(s) = &self.s {
            cfg.s_values = s.clone();
        }
        if let Some(b) = &self.batch_sizes {
            cfg.batch_sizes = b.clone();
        }
        let num = [
            ("n_nodes", self.n_nodes.map(|v| v.to_string())),
            ("n_train", self.n_train.map(|v| v.to_string())),
            ("n_val", self.n_val.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("epsilon", self.epsilon.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("gamma1", self.gamma1.map(|v| v.to_string())),
            ("gamma2", self.gamma2.map(|v| v.to_string())),
            ("delta", self.delta.clone()),
        ];
        for (k, v) in num {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for kv in &self.overrides {
            let Some((k, v)) = kv.split_once('=') else {
                bail!("--set expects KEY=VALUE, got '{kv}'");
            };
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> nlreg::Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Value> {
    let mesh = Mesh1D::new(cfg.n_nodes)?;
    let forward = ForwardSystem::assemble(&mesh, cfg.rho)?;
    let mut files = Vec::new();
    for (name, n, seed) in [("train", cfg.n_train, cfg.seed), ("val", cfg.n_val, cfg.val_seed())] {
        let ds = make_dataset(cfg.case, n, &cfg.noise, &forward, seed)?;
        let path = out_dir.join(format!("{name}.csv"));
        write_file(&path, |w| write_dataset_csv(&ds, &mesh, w))?;
        files.push(path.display().to_string());
    }
    Ok(json!({ "command": "generate", "files": files }))
}

fn load_dataset(path: &Path) -> Result<nlreg::datagen::Dataset> {
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_dataset_csv(BufReader::new(f))?)
}

fn train(cfg: &ExperimentConfig, data: Option<&Path>, out_dir: &Path) -> Result<Value> {
    let mut cfg = cfg.clone();
    let train = match data {
        Some(p) => {
            let ds = load_dataset(p)?;
            cfg.case = ds.case;
            cfg.n_nodes = ds.n_nodes;
            cfg.rho = ds.rho;
            ds
        }
        None => {
            let forward = ForwardSystem::assemble(&Mesh1D::new(cfg.n_nodes)?, cfg.rho)?;
            make_dataset(cfg.case, cfg.n_train, &cfg.noise, &forward, cfg.seed)?
        }
    };
    let out = run_pipeline(&cfg, train, None)?;
    let files = write_outputs(&out, out_dir, false)?;
    let runs: Vec<Value> = out
        .table
        .rows
        .iter()
        .map(|r| {
            json!({
                "s": r.s, "batch_size": r.batch_size, "n_batches": r.n_batches,
                "train_err_sigma": r.train_err_sigma, "train_err_nu": r.train_err_nu,
                "n_flagged": r.n_flagged, "n_failed": r.n_failed,
            })
        })
        .collect();
    Ok(json!({ "command": "train", "runs": runs, "n_files": files.len() }))
}

fn validate(cfg: &ExperimentConfig, data: &Path, weights: &[PathBuf]) -> Result<Value> {
    let val = load_dataset(data)?;
    let mut cfg = cfg.clone();
    cfg.n_nodes = val.n_nodes;
    cfg.rho = val.rho;
    let mut loaded = Vec::new();
    for p in weights {
        let f = fs::File::open(p).with_context(|| format!("opening {}", p.display()))?;
        loaded.push(read_weight_csv(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))?);
    }
    let grid = loaded[0].0.clone();
    if loaded.iter().any(|(g, _)| *g != grid) {
        bail!("weight files use different grids");
    }
    cfg.diameter = grid.diameter();
    let adm = Admissible::new(cfg.gamma1, cfg.gamma2, cfg.delta_value())?;
    let mesh = Mesh1D::new(cfg.n_nodes)?;
    let forward = ForwardSystem::assemble(&mesh, cfg.rho)?;
    let mut results = Vec::new();
    for &s in &cfg.s_values {
        let tensor = NonlocalTensor::assemble(&mesh, &grid, s)?;
        let setup = Setup {
            s,
            op: nlreg::lower::LowerOperator::new(forward.clone(), tensor)?,
            admissible: adm,
            bounds: adm.bounds(&grid),
            reg: nlreg::reduced::RegularizerParams::new(cfg.alpha, cfg.beta, grid.widths())?,
            criteria: cfg.criteria,
            nu_init: cfg.nu_init,
            warm_start: cfg.warm_start,
        };
        let ws = loaded
            .iter()
            .map(|(g, v)| WeightVector::new(g.clone(), v.clone(), adm))
            .collect::<nlreg::Result<Vec<_>>>()?;
        let v = run_validation(&setup, &ws, &val.samples)?;
        results.push(json!({
            "s": s, "mean_error": v.mean_error, "n_pairs": v.n_pairs, "n_failed": v.n_failed,
        }));
    }
    Ok(json!({ "command": "validate", "results": results }))
}

fn experiment(cfg: &ExperimentConfig, out_dir: &Path, dump_data: bool) -> Result<Value> {
    let out = run_experiment(cfg)?;
    let files = write_outputs(&out, out_dir, dump_data)?;
    eprint!("{}", out.table);
    Ok(json!({
        "command": "experiment",
        "table": out_dir.join("table.csv").display().to_string(),
        "n_files": files.len(),
        "n_flagged": out.table.rows.iter().map(|r| r.n_flagged).sum::<usize>(),
        "n_failed": out.table.rows.iter().map(|r| r.n_failed).sum::<usize>(),
    }))
}

fn outcome_json(o: &CheckOutcome) -> Value {
    json!({ "name": o.name, "worst": o.worst, "tolerance": o.tolerance, "samples": o.samples, "pass": o.pass })
}

fn check(n_nodes: usize, s_values: &[f64], seed: u64) -> Result<(Value, bool)> {
    let adm = Admissible::new(0.1, 10.0, 1.0)?;
    let mut outcomes = Vec::new();
    for &s in s_values {
        outcomes.push(checks::oracle_sweep(n_nodes, s, n_nodes + 1, 1e-10, 1e-14)?);
        let op = checks::default_operator(n_nodes, s, 0.1)?;
        outcomes.push(checks::structural_sweep(&op, adm, 5, seed, 1e-10)?);
        outcomes.push(checks::norm_equivalence_sweep(op.tensor(), adm, 50, seed, 1e-10)?);
        for case in [Case::A, Case::B] {
            outcomes.push(checks::gradient_sweep(&op, case, 2, seed, 1e-5)?);
        }
    }
    let pass = outcomes.iter().all(|o| o.pass);
    let report = json!({
        "command": "check",
        "pass": pass,
        "checks": outcomes.iter().map(outcome_json).collect::<Vec<_>>(),
    });
    Ok((report, pass))
}

fn run(cli: Cli) -> Result<(Value, bool)> {
    match cli.command {
        Command::Generate { cfg, out_dir } => Ok((generate(&cfg.resolve()?, &out_dir)?, true)),
        Command::Train { cfg, data, out_dir } => Ok((train(&cfg.resolve()?, data.as_deref(), &out_dir)?, true)),
        Command::Validate { cfg, data, weights } => Ok((validate(&cfg.resolve()?, &data, &weights)?, true)),
        Command::Experiment {
            cfg,
            out_dir,
            dump_data,
        } => Ok((experiment(&cfg.resolve()?, &out_dir, dump_data)?, true)),
        Command::Check { n_nodes, s, seed } => check(n_nodes, &s, seed),
    }
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    e.chain()
        .find_map(|c| c.downcast_ref::<nlreg::Error>().map(nlreg::Error::kind))
        .or_else(|| e.chain().find_map(|c| c.downcast_ref::<std::io::Error>().map(|_| "io")))
        .unwrap_or("cli")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((report, pass)) => {
            println!("{report}");
            if pass {
                ExitCode::SUCCESS
            } else {
                eprintln!(
                    "{}",
                    json!({ "error": { "kind": "check_failed", "message": "one or more checks failed" } })
                );
                ExitCode::from(1)
            }
        }
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("{}", json!({ "error": { "kind": error_kind(&e), "message": msg } }));
            ExitCode::from(2)
        }
    }
}
