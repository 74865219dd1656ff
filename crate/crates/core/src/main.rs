use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ezquant::bench::dequant_bench;
use ezquant::gradcheck::run_gradcheck;
use ezquant::manifest::ModelManifest;
use ezquant::model::{quantize_manifest_file, sweep_manifest, write_synthetic_model};
use ezquant::report::inspect;
use ezquant::{dequantize_model, Error, Mode, QuantConfig, SelectPolicy};

const EXIT_PARTIAL: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "ezquant",
    version,
    about = "Data-free weight-only quantization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Quantize every 2-D tensor listed in a manifest.
    Quantize(QuantizeArgs),
    /// Reconstruct f32 tensors and a manifest from a quantized directory.
    Dequantize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a quantized directory or a single .ezqt file.
    Inspect {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        json: bool,
        /// Extra grouping by tensor name; uses the first capture group if any.
        #[arg(long = "group")]
        groups: Vec<String>,
    },
    /// Check the analytic scale gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Time dequantization at several outlier ratios.
    Bench {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: bool,
    },
    /// Outlier fraction and error at several thresholds.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "sigma-list", value_delimiter = ',', required = true)]
        sigmas: Vec<f32>,
        #[command(flatten)]
        quant: QuantFlags,
        #[arg(long)]
        json: bool,
    },
    /// Write a synthetic model (manifest plus raw tensors) for experiments.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 8)]
        tensors: usize,
        #[arg(long, default_value_t = 256)]
        rows: usize,
        #[arg(long, default_value_t = 256)]
        cols: usize,
        #[arg(long, default_value_t = 0.005)]
        outlier_fraction: f64,
        /// Make every Nth tensor a 1-D bias (0 disables).
        #[arg(long, default_value_t = 0)]
        bias_every: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct QuantFlags {
    #[arg(long, default_value_t = 4)]
    bits: u8,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 200)]
    steps: usize,
    #[arg(long, default_value = "best")]
    select: SelectPolicy,
}

impl QuantFlags {
    fn config(&self, sigma_n: f32) -> QuantConfig {
        QuantConfig {
            bits: self.bits,
            sigma_n,
            lr: self.lr,
            steps: self.steps,
            select: self.select,
            ..QuantConfig::default()
        }
    }
}

#[derive(Args)]
struct QuantizeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3.0)]
    sigma: f32,
    #[command(flatten)]
    quant: QuantFlags,
    #[arg(long, env = "EZQUANT_WORKERS")]
    workers: Option<usize>,
    #[arg(long, default_value = "easyquant")]
    mode: Mode,
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("report serializes")
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Quantize(a) => {
            let cfg = a.quant.config(a.sigma);
            let workers = a
                .workers
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            if workers == 0 {
                return Err(Error::InvalidConfig("--workers must be positive".into()));
            }
            let model = quantize_manifest_file(&a.manifest, &a.out, &cfg, a.mode, workers)?;
            for o in &model.outcomes {
                match &o.result {
                    Ok(e) => {
                        let detail = match e.errors {
                            Some(s) => format!(
                                "{} outliers, error {:.6} -> {:.6}",
                                e.outlier_count.unwrap_or(0),
                                s.rtn_error,
                                s.final_error
                            ),
                            None => "passthrough".into(),
                        };
                        eprintln!("ok    {} ({detail}, {:.2?})", o.name, o.elapsed);
                    }
                    Err(err) => eprintln!("FAIL  {}: {err}", o.name),
                }
            }
            if model.is_complete() {
                Ok(0)
            } else {
                eprintln!(
                    "{} of {} tensors failed; no quantized manifest written",
                    model.failures().count(),
                    model.outcomes.len()
                );
                Ok(EXIT_PARTIAL)
            }
        }
        Command::Dequantize { input, out } => {
            let m = dequantize_model(&input, &out)?;
            eprintln!("wrote {} tensors to {}", m.tensors.len(), out.display());
            Ok(0)
        }
        Command::Inspect {
            input,
            json: as_json,
            groups,
        } => {
            let report = inspect(&input, &groups)?;
            if as_json {
                println!("{}", json(&report));
            } else {
                print!("{report}");
            }
            Ok(0)
        }
        Command::Gradcheck { trials, seed } => {
            let r = run_gradcheck(trials, seed);
            println!(
                "{}/{} trials within tolerance, worst relative error {:.3e}, {} redrawn, {:.2?}",
                r.passed, r.trials, r.worst_rel_error, r.redrawn, r.elapsed
            );
            Ok(if r.passed == r.trials { 0 } else { 1 })
        }
        Command::Bench {
            rows,
            cols,
            ratios,
            reps,
            seed,
            json: as_json,
        } => {
            let r = dequant_bench(rows, cols, &ratios, reps, seed)?;
            if as_json {
                println!("{}", json(&r));
            } else {
                println!("{rows}x{cols}, median of {reps}");
                println!(
                    "{:>10} {:>10} {:>12} {:>12} {:>9}",
                    "ratio", "outliers", "dequant_ms", "scatter_ms", "overhead"
                );
                for row in &r.results {
                    println!(
                        "{:>10} {:>10} {:>12.3} {:>12.3} {:>8.2}%",
                        row.ratio,
                        row.outliers,
                        row.dequant_s * 1e3,
                        row.scatter_s * 1e3,
                        row.overhead_pct
                    );
                }
                println!("scatter time monotone in ratio: {}", r.monotone);
            }
            Ok(0)
        }
        Command::Sweep {
            manifest,
            sigmas,
            quant,
            json: as_json,
        } => {
            let m = ModelManifest::load(&manifest)?;
            let base = manifest.parent().map(PathBuf::from).unwrap_or_default();
            let rows = sweep_manifest(&m, &base, &sigmas, &quant.config(3.0))?;
            if as_json {
                println!("{}", json(&rows));
            } else {
                println!(
                    "{:>6} {:>10} {:>10} {:>14} {:>14}",
                    "n", "outliers", "fraction", "rtn_error", "final_error"
                );
                for r in &rows {
                    println!(
                        "{:>6} {:>10} {:>9.4}% {:>14.6} {:>14.6}",
                        r.sigma_n,
                        r.outliers,
                        r.outlier_fraction * 100.0,
                        r.rtn_error,
                        r.final_error
                    );
                }
            }
            Ok(0)
        }
        Command::Synth {
            out,
            tensors,
            rows,
            cols,
            outlier_fraction,
            bias_every,
            seed,
        } => {
            if tensors == 0 || rows == 0 || cols == 0 {
                return Err(Error::InvalidConfig("sizes must be positive".into()));
            }
            write_synthetic_model(
                &out,
                tensors,
                rows,
                cols,
                outlier_fraction,
                bias_every,
                seed,
            )?;
            eprintln!("wrote {tensors} tensors to {}", out.display());
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
