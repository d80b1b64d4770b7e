use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use har_cli::{CmdError, PipelineConfig};
use har_core::engine::Schedule;

#[derive(Parser)]
#[command(name = "har", version, about = "Multi-sensor activity recognition pipeline: data, training, quantization, integer inference and hardware estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Opts,
}

#[derive(Args)]
struct Opts {
    /// JSON pipeline configuration; flags below override it.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding every artifact of the run.
    #[arg(long, global = true, value_name = "DIR", default_value = "har-out")]
    out: PathBuf,
    /// Precision list: magnitude bits for sweep (quantize takes the first),
    /// storage widths for report.
    #[arg(long, global = true, value_delimiter = ',', value_name = "LIST")]
    bits: Option<Vec<u32>>,
    #[arg(long, global = true)]
    schedule: Option<Schedule>,
    #[arg(long, global = true, value_name = "N")]
    clock_hz: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    window_ms: Option<f64>,
    #[arg(long, global = true, value_name = "N")]
    step_ms: Option<f64>,
    /// Number of modalities kept by select.
    #[arg(long, global = true, value_name = "N")]
    keep: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic labelled recording.
    GenData,
    /// Train the feature-fusion model.
    Train,
    /// Rank modalities by importance and retrain on the best ones.
    Select,
    /// Post-training quantization of the trained model.
    Quantize,
    /// Accuracy ratio across precisions.
    Sweep,
    /// Classify the test split with the integer engine.
    Infer,
    /// Stream the recording through the acquisition model and label frames.
    Simulate,
    /// Hardware cost table for each storage width and schedule.
    Report,
}

fn resolve(cmd: Command, o: &Opts) -> Result<PipelineConfig, CmdError> {
    let mut cfg = match &o.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    if let Some(b) = &o.bits {
        match cmd {
            Command::Report => cfg.hardware.report_widths = b.clone(),
            Command::Quantize | Command::Infer | Command::Simulate => {
                cfg.quant.n_bits = *b.first().ok_or_else(|| CmdError::Config("--bits is empty".into()))?
            }
            _ => cfg.quant.sweep_bits = b.clone(),
        }
    }
    if let Some(s) = o.schedule {
        cfg.hardware.schedule = s;
    }
    if let Some(c) = o.clock_hz {
        cfg.hardware.clock_hz = c;
    }
    if let Some(w) = o.window_ms {
        cfg.window.window_ms = w;
    }
    if let Some(s) = o.step_ms {
        cfg.window.step_ms = s;
    }
    if let Some(k) = o.keep {
        cfg.select.keep = k;
    }
    Ok(cfg.resolved())
}

fn run(cmd: Command, o: &Opts) -> Result<String, CmdError> {
    let cfg = resolve(cmd, o)?;
    let out = &o.out;
    Ok(match cmd {
        Command::GenData => format!("dataset written to {}", har_cli::cmd_gen_data(&cfg, out)?.display()),
        Command::Train => har_cli::cmd_train(&cfg, out)?.to_string(),
        Command::Select => har_cli::cmd_select(&cfg, out)?.to_string(),
        Command::Quantize => format!("quantized model written to {}", har_cli::cmd_quantize(&cfg, out)?.display()),
        Command::Sweep => {
            let pts = har_cli::cmd_sweep(&cfg, out)?;
            pts.iter()
                .map(|p| format!("n={:2} ratio={:.4}", p.n_bits, p.ratio))
                .collect::<Vec<_>>()
                .join("\n")
        }
        Command::Infer => har_cli::cmd_infer(&cfg, out)?.to_string(),
        Command::Simulate => har_cli::cmd_simulate(&cfg, out)?.to_string(),
        Command::Report => {
            let rows = har_cli::cmd_report(&cfg, out)?;
            har_core::engine::table_csv(&rows).trim_end().to_string()
        }
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command, &cli.opts) {
        Ok(msg) => {
            println!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.exit_code())
        }
    }
}
