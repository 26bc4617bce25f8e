use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hamnet::commands::{self, DiagnoseMode, Diagnosis};
use hamnet::error::Result;
use hamnet::executor::RayonExecutor;
use hamnet::spec::ExperimentSpec;
use hamnet_core::data::Benchmark;

/// Hamiltonian deep neural networks: generate data, train, evaluate and
/// diagnose.
#[derive(Parser)]
#[command(name = "hamnet", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a synthetic benchmark as `x1,…,xn,label` CSV.
    Gen {
        /// double_moons or swiss_roll.
        #[arg(long, alias = "mode")]
        dataset: Benchmark,
        #[arg(long, default_value_t = 5000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Noise standard deviation (default depends on the dataset).
        #[arg(long)]
        noise: Option<f64>,
        /// Zero-pad features to this width.
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model from a spec file.
    Train {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Accuracy of a saved model on a CSV file or an MNIST directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Per-sample predictions.
        #[arg(long, default_value = "pred.csv")]
        out: PathBuf,
    },
    /// Export gradient norms, spectrum checks or the step-size convergence
    /// table for a saved model.
    Diagnose {
        #[arg(long)]
        model: PathBuf,
        /// gradnorms, spectrum or lemma1.
        #[arg(long)]
        mode: DiagnoseMode,
        /// Probe inputs (default: seeded double moons).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every architecture × depth cell of a spec file.
    Grid {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the spec's `out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_spec(path: &PathBuf, seed: Option<u64>) -> Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::parse_file(path)?;
    if let Some(s) = seed {
        spec.train.seed = s;
    }
    Ok(spec)
}

fn model_is_time_invariant(path: &std::path::Path) -> Result<bool> {
    Ok(hamnet::model_file::load_model(path)?.net.time_invariant)
}

fn run(cmd: Cmd) -> Result<()> {
    let exec = RayonExecutor::from_env()?;
    match cmd {
        Cmd::Gen {
            dataset,
            samples,
            seed,
            noise,
            n,
            out,
        } => {
            let d = commands::cmd_gen(dataset, samples, seed, noise, n, &out)?;
            println!("wrote {} samples to {}", d.len(), out.display());
        }
        Cmd::Train { spec, seed } => {
            let spec = load_spec(&spec, seed)?;
            let r = commands::cmd_train(&spec, &exec)?;
            println!("model: {}", r.model.describe());
            println!("test accuracy: {:.4}", r.test_accuracy);
        }
        Cmd::Eval { model, data, out } => {
            let acc = commands::cmd_eval(&model, &data, &out, &exec)?;
            println!("accuracy: {acc:.4}");
        }
        Cmd::Diagnose {
            model,
            mode,
            data,
            out,
            seed,
        } => match commands::cmd_diagnose(&model, mode, data.as_deref(), &out, seed, &exec)? {
            Diagnosis::GradNorms(t) => {
                for r in &t.records {
                    println!("layer {:>3}: {:.6}", r.layer, r.norm);
                }
            }
            Diagnosis::Spectrum(rows) => {
                let failed = rows.iter().filter(|(_, r)| !r.passed).count();
                let worst = rows.iter().map(|(_, r)| r.max_re_lambda).fold(0.0, f64::max);
                println!("{} checks, {failed} failed, max |Re λ| = {worst:.3e}", rows.len());
            }
            Diagnosis::Convergence(rows) => {
                if !model_is_time_invariant(&model)? {
                    eprintln!("note: time-varying model; using layer 0's (K, b) at every step");
                }
                for r in &rows {
                    let ratio = r.ratio.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
                    println!("N = {:>3}  h = {:.5}  error = {:.3e}  ratio = {ratio}", r.layers, r.h, r.error);
                }
            }
        },
        Cmd::Grid { spec, seed, out } => {
            let mut spec = load_spec(&spec, seed)?;
            if let Some(o) = out {
                spec.grid_out = o;
            }
            commands::cmd_grid(&spec, &exec, &mut |c| match (&c.test_accuracy, &c.error) {
                (Some(a), _) => println!("{} N={}: {a:.4}", c.arch, c.layers),
                (None, e) => eprintln!("{} N={}: failed: {}", c.arch, c.layers, e.as_deref().unwrap_or("?")),
            })?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
