//! `mixinv`: reproducible command-line workflows over the mixinv library.
//!
//! Exit codes: 0 success, 1 internal contract violation, 2 usage or config
//! error, 3 data error, 4 numeric failure, 5 sweep finished with failed
//! cells.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mixinv::checkpoint::LoadedModel;
use mixinv::config::RunConfig;
use mixinv::cooperative::{infer_partial, InverseQuery};
use mixinv::data::{filter_by_age, load_dataset, split, summarize, DESIGN_VARS, N_DESIGN};
use mixinv::eval::{
    fit_stats, gp_complete, gp_seed, load_filtered, read_report, run_sweep, summarize_rows, summary_table,
    write_summary_csv, EvalCell, Method, SplitModels, SweepRow,
};
use mixinv::gp::fit_gp;
use mixinv::runs::execute_train;
use mixinv::{Error, ErrorClass};

#[derive(Parser)]
#[command(name = "mixinv", version, about = "Partial inverse design of concrete mixes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override one config field, `key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Load a raw table, keep rows with age <= max-age, write it with a column summary.
    Ingest {
        input: PathBuf,
        /// Filtered table.
        #[arg(long)]
        out: PathBuf,
        /// Column summary CSV; standard output when absent.
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 28.0)]
        max_age: f64,
    },
    /// Pretrain the surrogate, train the configured imputer and write a run directory.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Evaluate every configured method on every split and mask level.
    Sweep {
        #[command(flatten)]
        config: ConfigArgs,
        /// Worker threads for independent splits.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Report directory; `<output_dir>/sweep` when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Complete a partial design with a trained model; CSV on standard output.
    Infer {
        /// Run directory written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Fixed variable in raw units, `name=value` (repeatable).
        #[arg(long = "fix", value_name = "NAME=VALUE")]
        fixed: Vec<String>,
        /// Target compressive strength, MPa.
        #[arg(long)]
        target: f64,
        #[arg(long, default_value_t = 1)]
        candidates: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Complete one split's test rows with the GP + Metropolis-Hastings baseline.
    BaselineGp {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
        #[arg(long, default_value_t = 1000)]
        budget: usize,
        #[arg(long, default_value_t = 5)]
        max_masked: usize,
        /// Per-row CSV; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve trained models over HTTP.
    Serve {
        /// Directory holding run directories.
        #[arg(long)]
        models: PathBuf,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Allow cross-origin requests from any origin.
        #[arg(long)]
        cors: bool,
    },
    /// Summarize a sweep report CSV: mean ± std per cell and GP speedups.
    Report {
        input: PathBuf,
        /// Summary CSV; only the text table is printed when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Failure {
    Core(Error),
    Usage(String),
    PartialSweep(usize),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::Core(Error::io(path, e))
}

fn load_config(args: &ConfigArgs) -> Result<(RunConfig, String), Failure> {
    let text = fs::read_to_string(&args.config).map_err(io_err(&args.config))?;
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    Ok((cfg, text))
}

fn write_out(path: Option<&Path>, bytes: &[u8]) -> Result<(), Failure> {
    match path {
        Some(p) => fs::write(p, bytes).map_err(io_err(p)),
        None => io::stdout().write_all(bytes).map_err(|e| Failure::Core(Error::io("<stdout>", e))),
    }
}

fn ingest(input: &Path, out: &Path, summary: Option<&Path>, max_age: f64) -> Result<(), Failure> {
    let raw = load_dataset(input)?;
    let ds = filter_by_age(&raw, max_age)?;
    ds.write_csv(out)?;
    let mut buf = Vec::new();
    summarize(&ds).write_csv(&mut buf).expect("vec write");
    write_out(summary, &buf)?;
    eprintln!("{} rows read, {} rows with age <= {max_age} written to {}", raw.len(), ds.len(), out.display());
    Ok(())
}

fn train(args: &ConfigArgs) -> Result<(), Failure> {
    let (cfg, text) = load_config(args)?;
    let out = execute_train(&cfg, Some(&text))?;
    for m in &out.metrics.test {
        eprintln!(
            "max_masked {}: R2 {:.4}, MAE {:.4}, MSE {:.4} (normalized), {:.4}s",
            m.max_masked, m.normalized.r2, m.normalized.mae, m.normalized.mse, m.seconds
        );
    }
    println!("{}", out.dir.display());
    Ok(())
}

fn sweep(args: &ConfigArgs, jobs: usize, out: Option<&Path>) -> Result<(), Failure> {
    let (cfg, text) = load_config(args)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.join("sweep"));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let report = run_sweep(&cfg, jobs)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).expect("vec write");
    fs::write(dir.join("report.csv"), csv).map_err(io_err(&dir))?;
    let summary = report.summary();
    let mut sum = Vec::new();
    write_summary_csv(&summary, &mut sum).expect("vec write");
    fs::write(dir.join("summary.csv"), sum).map_err(io_err(&dir))?;
    let table = summary_table(&summary);
    fs::write(dir.join("summary.txt"), &table).map_err(io_err(&dir))?;
    fs::write(dir.join("config.toml"), text).map_err(io_err(&dir))?;
    print!("{table}");
    if !report.failures.is_empty() {
        let mut f = Vec::new();
        report.write_failures(&mut f).expect("vec write");
        fs::write(dir.join("failures.csv"), f).map_err(io_err(&dir))?;
        return Err(Failure::PartialSweep(report.failures.len()));
    }
    Ok(())
}

fn parse_fixed(items: &[String]) -> Result<BTreeMap<String, f64>, Failure> {
    let mut out = BTreeMap::new();
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--fix expects name=value, got `{item}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Failure::Usage(format!("--fix {k}: `{v}` is not a number")))?;
        out.insert(k.trim().to_string(), v);
    }
    Ok(out)
}

fn infer(model: &Path, fixed: &[String], target: f64, candidates: usize, seed: u64) -> Result<(), Failure> {
    let fixed = parse_fixed(fixed)?;
    let m = LoadedModel::load(model)?;
    let q = InverseQuery {
        fixed,
        target_strength: target,
        num_candidates: candidates,
        seed,
    };
    let out = infer_partial(&m.imputer, &m.surrogate, &q)?;
    let mut s = format!("candidate,{},predicted_strength,deviation\n", DESIGN_VARS.join(","));
    for (i, c) in out.iter().enumerate() {
        let values: Vec<String> = c.design.iter().map(f64::to_string).collect();
        s.push_str(&format!("{i},{},{},{}\n", values.join(","), c.predicted_strength, c.predicted_strength - target));
    }
    write_out(None, s.as_bytes())
}

fn baseline_gp(args: &ConfigArgs, split_seed: u64, budget: usize, max_masked: usize, out: Option<&Path>) -> Result<(), Failure> {
    let (cfg, _) = load_config(args)?;
    let ds = load_filtered(&cfg)?;
    let sp = split(&ds, cfg.split_spec(split_seed))?;
    let norm = fit_stats(&cfg, &sp.train)?;
    let gp = fit_gp(&sp.train, &norm, &cfg.gp_grid())?;
    eprintln!(
        "gp: signal_var {}, lengthscale {}, noise_var {}, jitter {:e}, log marginal likelihood {:.3}",
        gp.kernel.signal_var, gp.kernel.lengthscale, gp.kernel.noise_var, gp.jitter, gp.log_marginal_likelihood
    );
    let models = SplitModels {
        split: sp,
        norm: norm.clone(),
        surrogate: mixinv::surrogate::SurrogateModel {
            net: mixinv::nn::MlpParams::init(&[N_DESIGN, 1], 0)?,
            norm: norm.clone(),
            config: cfg.surrogate_config(),
            seed: 0,
        },
        surrogate_log: Vec::new(),
        imputers: BTreeMap::new(),
        gp: None,
    };
    let cell = EvalCell::new(&models, max_masked, cfg.mask_seed)?;
    let seed = gp_seed(split_seed, max_masked, budget);
    let c = gp_complete(&gp, &cell, budget, cfg.mh_proposal_std, seed)?;
    let mut s = format!(
        "row,masked,{},target_strength,seconds,acceptance_rate\n",
        DESIGN_VARS.join(",")
    );
    for i in 0..cell.x.nrows() {
        let design: Vec<String> = (0..N_DESIGN)
            .map(|j| norm.denormalize_value(j, c.completions[[i, j]]).to_string())
            .collect();
        let target = models.split.test.rows[i].strength;
        s.push_str(&format!(
            "{i},{},{},{target},{},{}\n",
            cell.mask.masked_count(i),
            design.join(","),
            c.row_seconds[i],
            c.acceptance[i]
        ));
    }
    write_out(out, s.as_bytes())?;
    let mean_acc = c.acceptance.iter().sum::<f64>() / c.acceptance.len() as f64;
    eprintln!("{} rows, budget {budget}: {:.3}s total, mean acceptance {mean_acc:.3}", cell.x.nrows(), c.seconds());
    Ok(())
}

fn serve(models: &Path, host: &str, port: u16, cors: bool) -> Result<(), Failure> {
    let state = mixinv_server::AppState::load(models)?;
    let addr = format!("{host}:{port}")
        .parse()
        .map_err(|_| Failure::Usage(format!("`{host}:{port}` is not a socket address")))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::Core(Error::io("<runtime>", e)))?;
    rt.block_on(mixinv_server::serve(addr, state, cors))
        .map_err(|e| Failure::Core(Error::io(format!("{addr}"), e)))
}

/// Mean completion time per method at the hardest level, relative to the
/// cooperative DAE.
fn speedups(rows: &[SweepRow]) -> String {
    let Some(level) = rows.iter().map(|r| r.max_masked).max() else {
        return String::new();
    };
    let mut times: BTreeMap<(String, Option<usize>), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.max_masked == level) {
        times.entry((r.method.clone(), r.budget)).or_default().push(r.seconds);
    }
    let mean = |v: &Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
    let base_name = Method::Conn(mixinv::imputation::Variant::Dae).to_string();
    let Some(base) = times.get(&(base_name.clone(), None)).map(mean) else {
        return String::new();
    };
    let mut s = format!("\n# completion time at max_masked={level} relative to {base_name}\n");
    s.push_str(&format!("{:<17} {:>7} {:>12} {:>12}\n", "method", "budget", "seconds", "ratio"));
    for ((m, b), v) in &times {
        let t = mean(v);
        s.push_str(&format!(
            "{:<17} {:>7} {:>12.4} {:>12.1}\n",
            m,
            b.map(|b| b.to_string()).unwrap_or_else(|| "-".into()),
            t,
            t / base.max(f64::MIN_POSITIVE)
        ));
    }
    s
}

fn report(input: &Path, out: Option<&Path>) -> Result<(), Failure> {
    let rows = read_report(input)?;
    let summary = summarize_rows(&rows);
    if let Some(p) = out {
        let mut buf = Vec::new();
        write_summary_csv(&summary, &mut buf).expect("vec write");
        fs::write(p, buf).map_err(io_err(p))?;
    }
    print!("{}{}", summary_table(&summary), speedups(&rows));
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Ingest {
            input,
            out,
            summary,
            max_age,
        } => ingest(&input, &out, summary.as_deref(), max_age),
        Command::Train { config } => train(&config),
        Command::Sweep { config, jobs, out } => sweep(&config, jobs, out.as_deref()),
        Command::Infer {
            model,
            fixed,
            target,
            candidates,
            seed,
        } => infer(&model, &fixed, target, candidates, seed),
        Command::BaselineGp {
            config,
            split_seed,
            budget,
            max_masked,
            out,
        } => baseline_gp(&config, split_seed, budget, max_masked, out.as_deref()),
        Command::Serve {
            models,
            host,
            port,
            cors,
        } => serve(&models, &host, port, cors),
        Command::Report { input, out } => report(&input, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::PartialSweep(n)) => {
            eprintln!("error: {n} sweep cells failed; see failures.csv");
            ExitCode::from(5)
        }
        Err(Failure::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Data => 3,
                ErrorClass::Numeric => 4,
                ErrorClass::Contract => 1,
            })
        }
    }
}
