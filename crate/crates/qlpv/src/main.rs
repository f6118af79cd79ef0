use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qlpv::config::RunConfig;
use qlpv::error::Result;
use qlpv::pipeline::{self, Options};

#[derive(Parser)]
#[command(name = "qlpv", version, about = "Identify qLPV models with certified invariant sets and track references inside them")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML); defaults apply to missing fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `out` in the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Write zero wall times so reruns produce identical files.
    #[arg(long, global = true)]
    strict_determinism: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant and write train, disturbance and test data.
    GenData {
        /// Use this many samples for every dataset.
        #[arg(long)]
        points: Option<usize>,
    },
    /// Pretrain and run the outer training loop.
    Identify {
        /// Run sequential, baseline and every zeta of the sweep.
        #[arg(long)]
        sweep: bool,
        /// Continue from a checkpoint instead of pretraining.
        #[arg(long, conflicts_with = "sweep")]
        resume: Option<PathBuf>,
    },
    /// Recompute and verify the invariant set of a trained model.
    Rci {
        /// Defaults to `<out>/checkpoint.json`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Closed-loop tracking inside the invariant set.
    Simulate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `<out>/rci.json`.
        #[arg(long)]
        rci: Option<PathBuf>,
    },
    /// Summarize checkpoints as a markdown table.
    Report {
        paths: Vec<PathBuf>,
        /// Also write the table here.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| String::from("infeasible"), |v| format!("{v:.6}"))
}

fn run(cli: Cli) -> Result<()> {
    let opts = Options { force: cli.global.force, strict: cli.global.strict_determinism };
    let mut cfg = load_config(&cli.global)?;
    if let Command::Report { paths, output } = &cli.command {
        let table = pipeline::report(paths)?;
        print!("{table}");
        if let Some(p) = output {
            std::fs::write(p, &table).map_err(|e| qlpv::error::CliError::io(p, e))?;
        }
        return Ok(());
    }
    if let Command::GenData { points: Some(n) } = &cli.command {
        cfg.data.train_points = *n;
        cfg.data.disturbance_points = *n;
        cfg.data.test_points = *n;
    }
    cfg.validate()?;
    pipeline::echo_config(&cfg)?;
    let default_ck = cfg.out.join("checkpoint.json");
    match cli.command {
        Command::GenData { .. } => {
            for p in pipeline::gen_data(&cfg, opts)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Identify { sweep: true, .. } => {
            let res = pipeline::sweep(&cfg, opts)?;
            print!("{}", pipeline::summary_table(&res.summaries()));
        }
        Command::Identify { resume, .. } => {
            let run = pipeline::identify(&cfg, opts, resume.as_deref())?;
            let s = &run.summary;
            println!("BFR train {:.2}  disturbance {:.2}  test {:.2}", s.bfr_train, s.bfr_disturbance, s.bfr_test);
            if run.variant != pipeline::Variant::Sequential {
                println!("final r {:.6}", run.checkpoint.r);
                print!("{}", pipeline::summary_table(std::slice::from_ref(s)));
            }
        }
        Command::Rci { checkpoint } => {
            let out = pipeline::rci(&cfg, opts, &checkpoint.unwrap_or(default_ck))?;
            println!("baseline program r {}", opt(out.baseline_r));
            println!("iterative r {:.6} after {} steps ({:?})", out.solution.r, out.solution.trace.len(), out.solution.status);
            if out.increases.is_empty() {
                println!("trace non-increasing within {:e}", pipeline::TRACE_TOL);
            } else {
                println!("FLAGGED: trace increases at steps {:?}", out.increases);
            }
            println!(
                "verification {}: max row violation {:.3e}, {} sampled violations over {} states",
                if out.verify.passed() { "passed" } else { "FAILED" },
                out.verify.max_row_violation(),
                out.verify.sampled_violations(),
                out.verify.samples
            );
        }
        Command::Simulate { checkpoint, rci } => {
            let rci = rci.unwrap_or_else(|| cfg.out.join("rci.json"));
            let out = pipeline::simulate(&cfg, opts, &checkpoint.unwrap_or(default_ck), &rci)?;
            println!(
                "{} steps, mean |y - r| {:.4}; violations: output {}, state {}, input {}",
                out.trace.len(),
                out.mean_abs_error,
                out.output_violations,
                out.state_violations,
                out.input_violations
            );
        }
        Command::Report { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
