//! `thermoda` subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thermoda_core::EvalReport;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::io::{write_atomic, write_table_csv};
use crate::pipeline::{self, loss_csv, predictions_csv, ExperimentSpec, TargetRun};

/// Output directory override, taking precedence over the config file.
pub const OUT_ENV: &str = "THERMODA_OUT";

#[derive(Debug, Parser)]
#[command(
    name = "thermoda",
    version,
    about = "Pretrain, adapt and compare LSTM building forecasters"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML run configuration. Without it the synthetic benchmark defaults
    /// are used.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides THERMODA_OUT and `out_dir`.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads; 0 uses every available core.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct Schedule {
    /// Overrides the epoch count of the training phases this command runs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Runs a single horizon, in steps, instead of the configured list.
    #[arg(long)]
    pub horizon: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the synthetic source and target datasets as CSV.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train on the whole source dataset and save one checkpoint per horizon.
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        schedule: Schedule,
    },
    /// Fine-tune a pretrained checkpoint on the target training split.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Pretrained checkpoint to start from.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// Overrides the fine-tuning epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Train on the target training split from a fresh initialization.
    Scratch {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        schedule: Schedule,
    },
    /// Score a checkpoint on the target test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to score.
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
    },
    /// Pretrain, adapt and scratch at every horizon and tabulate the metrics.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        schedule: Schedule,
    },
}

/// Parses the process arguments, runs the command and returns the exit
/// status.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Session {
    cfg: RunConfig,
    out: PathBuf,
}

impl Session {
    fn open(common: &Common) -> Result<Self> {
        let mut cfg = match &common.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(w) = common.workers {
            cfg.workers = w;
        }
        let env_out = std::env::var_os(OUT_ENV)
            .filter(|v| !v.is_empty())
            .map(PathBuf::from);
        if let Some(out) = common.out.clone().or(env_out) {
            cfg.out_dir = out;
        }
        let out = cfg.out_dir.clone();
        Ok(Session { cfg, out })
    }

    fn apply_schedule(&mut self, schedule: &Schedule, phases: &[Phase]) {
        if let Some(e) = schedule.epochs {
            self.set_epochs(e, phases);
        }
        if let Some(h) = schedule.horizon {
            self.cfg.horizons = vec![h];
        }
    }

    fn set_epochs(&mut self, epochs: usize, phases: &[Phase]) {
        for phase in phases {
            match phase {
                Phase::Pretrain => self.cfg.pretrain.epochs = epochs,
                Phase::Finetune => self.cfg.finetune.epochs = epochs,
                Phase::Scratch => self.cfg.scratch.epochs = epochs,
            }
        }
    }

    /// Validates, echoes the resolved configuration and sets up workers.
    fn start(&self, write_echo: bool) -> Result<()> {
        self.cfg.validate()?;
        let text = self.cfg.to_toml();
        log::info!("resolved configuration:\n{text}");
        if write_echo {
            write_atomic(self.out.join("resolved_config.toml"), text.as_bytes())?;
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(self.cfg.workers)
            .build_global();
        Ok(())
    }

    fn spec(&self) -> Result<ExperimentSpec> {
        self.cfg.to_spec()
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.out.join(name);
        write_atomic(&path, bytes)?;
        Ok(path)
    }

    fn write_run(&self, spec: &ExperimentSpec, run: &TargetRun) -> Result<()> {
        let stem = format!("{}_h{}", run.mode.as_str(), run.report.horizon_steps);
        self.write(&format!("{stem}_loss.csv"), &loss_csv(&run.trace))?;
        self.write(
            &format!("{stem}_predictions.csv"),
            &predictions_csv(
                &run.forecasts,
                &run.data.target_names,
                run.params().shape().input_len,
                run.data.sample_period,
            ),
        )?;
        self.write(&format!("{stem}_report.json"), &report_json(&run.report))?;
        run.checkpoint(spec)
            .save(self.out.join(format!("{stem}.ckpt")))?;
        Ok(())
    }
}

enum Phase {
    Pretrain,
    Finetune,
    Scratch,
}

fn report_json(report: &EvalReport) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
    out.push(b'\n');
    out
}

fn print_report(label: &str, r: &EvalReport) {
    println!(
        "{label:<10} horizon {:>3}  CVRMSE {:>8.3}%  NMBE {:>8.3}%  MAPE {:>8.3}%  RMSE {:>9.4}",
        r.horizon_steps, r.cvrmse, r.nmbe, r.mape, r.rmse
    );
}

fn existing_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.is_file() {
        return Err(Error::Usage(format!(
            "--checkpoint: no checkpoint file at {}",
            path.display()
        )));
    }
    Checkpoint::load(path)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { common } => {
            let s = Session::open(&common)?;
            s.start(true)?;
            for (ds, table) in [
                (&s.cfg.source, s.cfg.source_table()),
                (&s.cfg.target, s.cfg.target_table()),
            ] {
                if ds.synthetic.is_none() {
                    return Err(Error::Usage(format!(
                        "synth needs a `synthetic` table for dataset `{}`",
                        ds.name
                    )));
                }
                let table = table?;
                let path = s.out.join(format!("{}.csv", ds.name));
                write_table_csv(&path, &table)?;
                println!("{}: {} rows -> {}", ds.name, table.len(), path.display());
            }
            Ok(())
        }
        Command::Pretrain { common, schedule } => {
            let mut s = Session::open(&common)?;
            s.apply_schedule(&schedule, &[Phase::Pretrain]);
            s.start(true)?;
            let spec = s.spec()?;
            for &h in &spec.horizons {
                let (ckpt, trace) = pipeline::pretrain(&spec, h)?;
                let path = s.out.join(format!("pretrain_h{h}.ckpt"));
                ckpt.save(&path)?;
                s.write(&format!("pretrain_h{h}_loss.csv"), &loss_csv(&trace))?;
                println!(
                    "pretrain   horizon {h:>3}  final loss {:.6}  -> {}",
                    trace.final_loss().unwrap_or(f64::NAN),
                    path.display()
                );
            }
            Ok(())
        }
        Command::Adapt {
            common,
            checkpoint,
            epochs,
        } => {
            let mut s = Session::open(&common)?;
            if let Some(e) = epochs {
                s.set_epochs(e, &[Phase::Finetune]);
            }
            s.start(true)?;
            let ckpt = existing_checkpoint(&checkpoint)?;
            let spec = s.spec()?;
            let run = pipeline::adapt(&spec, &ckpt)?;
            s.write_run(&spec, &run)?;
            print_report("adapt", &run.report);
            Ok(())
        }
        Command::Scratch { common, schedule } => {
            let mut s = Session::open(&common)?;
            s.apply_schedule(&schedule, &[Phase::Scratch]);
            s.start(true)?;
            let spec = s.spec()?;
            for &h in &spec.horizons {
                let run = pipeline::scratch(&spec, h)?;
                s.write_run(&spec, &run)?;
                print_report("scratch", &run.report);
            }
            Ok(())
        }
        Command::Evaluate { common, checkpoint } => {
            let s = Session::open(&common)?;
            s.start(false)?;
            let ckpt = existing_checkpoint(&checkpoint)?;
            let spec = s.spec()?;
            let (report, _) = pipeline::evaluate(&spec, &ckpt)?;
            s.write(
                &format!("evaluate_h{}_report.json", report.horizon_steps),
                &report_json(&report),
            )?;
            print_report("evaluate", &report);
            Ok(())
        }
        Command::Compare { common, schedule } => {
            let mut s = Session::open(&common)?;
            s.apply_schedule(
                &schedule,
                &[Phase::Pretrain, Phase::Finetune, Phase::Scratch],
            );
            s.start(true)?;
            let spec = s.spec()?;
            let cmp = pipeline::compare(&spec)?;
            for h in &cmp.horizons {
                h.pretrained
                    .save(s.out.join(format!("pretrain_h{}.ckpt", h.horizon)))?;
                s.write(
                    &format!("pretrain_h{}_loss.csv", h.horizon),
                    &loss_csv(&h.pretrain_trace),
                )?;
                s.write_run(&spec, &h.adapt)?;
                s.write_run(&spec, &h.scratch)?;
            }
            s.write("comparison.csv", &cmp.csv())?;
            s.write("comparison.json", &cmp.json())?;
            s.write("improvement.csv", &cmp.improvement_csv())?;
            print!("{}", cmp.table());
            for r in cmp.improvements() {
                println!(
                    "horizon {:>3}: RMSE improvement {:.2}%",
                    r.horizon_steps, r.rmse_improvement_pct
                );
            }
            Ok(())
        }
    }
}
