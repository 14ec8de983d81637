// ssh: spectral adapter experiments and accounting.
//
// Usage:
//   ssh --out runs/a recover
//   ssh --config exp.json --seed 3 --out runs/b sweep-delta --deltas 0,0.5,1 --repeats 20
//   ssh --out runs/c gradcheck --trials 10
//   ssh --out runs/d table1 roberta-base vit-large
//   ssh --out runs/e profile weights.sshmat --n 200
//   ssh --out runs/f budget llama2-7b --n 1000 --rank 16
//
// Exit status: 0 when every check passes, 1 when a check fails, 2 on error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use ssh_core::accounting::{self, flop_model, preset, BudgetReport, SpectralMethod};
use ssh_core::harness::report::ensure_dir;
use ssh_core::harness::{
    capture_is_monotone, mean_capture_by_delta, profile_spectrum, read_matrix, run_delta_sweep, run_experiment,
    run_gradcheck, run_table1, save_checkpoint, write_csv, write_json, write_matrix, ExperimentConfig, SweepRow,
};
use ssh_core::{Error, Result};

#[derive(Parser)]
#[command(name = "ssh", version, about = "Sparse Hartley-spectrum adapters: experiments and accounting")]
struct Cli {
    /// Overrides the config's experiment and selection seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured task and write history, summary and checkpoint.
    Recover,
    /// Planted recovery across energy ratios.
    SweepDelta {
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1")]
        deltas: Vec<f64>,
        /// Run seeds `seed..seed+repeats`.
        #[arg(long, default_value_t = 1)]
        repeats: u64,
    },
    /// Compare analytic coefficient gradients with finite differences.
    Gradcheck {
        /// Shapes as ROWSxCOLS, at most 16x16.
        #[arg(long, value_delimiter = ',', default_value = "8x8,10x12,12x12,16x9,16x16")]
        shapes: Vec<String>,
        #[arg(long, default_value_t = 10)]
        trials: usize,
    },
    /// Recompute the published parameter/byte table.
    Table1 {
        /// Presets to include; all rows when empty.
        presets: Vec<String>,
    },
    /// Energy profile of a matrix file.
    Profile {
        weights: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        delta: Option<f64>,
    },
    /// Trainable parameters, bytes and delta FLOPs for a model preset.
    Budget {
        model: String,
        #[arg(long, default_value_t = 750)]
        n: usize,
        #[arg(long, default_value_t = 8)]
        rank: usize,
    },
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let cfg = match cli.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_shape(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("shape must look like 8x12, got {text:?}"));
    let (a, b) = text.split_once('x').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

#[derive(Serialize)]
struct SweepSummary {
    deltas: Vec<f64>,
    seeds: Vec<u64>,
    mean_capture: Vec<(f64, f64)>,
    monotone_mean_capture: bool,
}

#[derive(Serialize)]
struct GradcheckRow {
    d1: usize,
    d2: usize,
    n: usize,
    trial: usize,
    max_relative_error: f64,
}

#[derive(Serialize)]
struct BudgetSummary {
    reports: Vec<BudgetReport>,
    /// SSH over complex-spectrum delta FLOPs.
    flop_ratio: f64,
}

fn recover(cfg: &ExperimentConfig, out: &Path) -> Result<bool> {
    let run = run_experiment(cfg)?;
    write_csv(&out.join("history.csv"), &run.history)?;
    write_json(&out.join("summary.json"), &run.summary)?;
    write_matrix(&out.join("w0.sshmat"), run.layer.w0())?;
    save_checkpoint(&out.join("adapter.sshckpt"), &run.layer)?;
    let s = &run.summary;
    println!(
        "recover: epochs={} final_loss={:.6e} final_error={:.6e} capture={:.3} [{}] {}",
        s.epochs_run,
        s.final_loss,
        s.final_error,
        s.support_captured,
        if s.passed { "PASS" } else { "FAIL" },
        s.check
    );
    Ok(s.passed)
}

fn sweep(cfg: &ExperimentConfig, out: &Path, deltas: &[f64], repeats: u64) -> Result<bool> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..repeats).map(|i| cfg.seed.wrapping_add(i)).collect();
    let mut rows: Vec<SweepRow> = Vec::new();
    for &seed in &seeds {
        rows.extend(run_delta_sweep(&cfg.clone().with_seed(seed), deltas)?);
    }
    rows.sort_by(|a, b| a.delta.total_cmp(&b.delta).then(a.seed.cmp(&b.seed)));
    let summary = SweepSummary {
        deltas: deltas.to_vec(),
        seeds,
        mean_capture: mean_capture_by_delta(&rows),
        monotone_mean_capture: capture_is_monotone(&rows),
    };
    write_csv(&out.join("sweep.csv"), &rows)?;
    write_json(&out.join("sweep_summary.json"), &summary)?;
    for (delta, capture) in &summary.mean_capture {
        println!("sweep-delta: delta={delta} mean_capture={capture:.4}");
    }
    println!("sweep-delta: monotone mean capture: {}", summary.monotone_mean_capture);
    Ok(true)
}

fn gradcheck(seed: u64, out: &Path, shapes: &[String], trials: usize) -> Result<bool> {
    let shapes = shapes.iter().map(|s| parse_shape(s)).collect::<Result<Vec<_>>>()?;
    let report = run_gradcheck(&shapes, trials, seed)?;
    let rows: Vec<GradcheckRow> = report
        .cases
        .iter()
        .map(|c| GradcheckRow {
            d1: c.shape.0,
            d2: c.shape.1,
            n: c.n,
            trial: c.trial,
            max_relative_error: c.max_relative_error,
        })
        .collect();
    write_csv(&out.join("gradcheck.csv"), &rows)?;
    write_json(&out.join("gradcheck.json"), &report)?;
    println!(
        "gradcheck: {} cases, max relative error {:.3e} (tolerance {:.0e}) [{}]",
        rows.len(),
        report.max_relative_error,
        report.tolerance,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(report.passed)
}

fn table1(out: &Path, presets: &[String]) -> Result<bool> {
    let names: Vec<&str> = presets.iter().map(String::as_str).collect();
    let report = run_table1(&names)?;
    write_csv(&out.join("table1.csv"), &report.rows)?;
    write_json(&out.join("table1.json"), &report)?;
    for r in report.rows.iter().filter(|r| !r.matches) {
        let why = if r.known_discrepancy.is_empty() { "UNEXPECTED" } else { &r.known_discrepancy };
        println!(
            "table1: row {} {} {:?} {:?}: computed {} printed {} ({why})",
            r.row, r.model, r.method, r.column, r.computed, r.printed
        );
    }
    println!(
        "table1: {} cells, {} match, {} known discrepancies, {} unexpected [{}]",
        report.rows.len(),
        report.matched,
        report.known_mismatches,
        report.unexpected_mismatches,
        if report.passed { "PASS" } else { "FAIL" }
    );
    Ok(report.passed)
}

fn profile(cfg: &ExperimentConfig, out: &Path, weights: &Path, n: Option<usize>, delta: Option<f64>) -> Result<bool> {
    let w = read_matrix(weights)?;
    let mut selection = cfg.selection;
    selection.n = n.unwrap_or(selection.n);
    selection.delta = delta.unwrap_or(selection.delta);
    let report = profile_spectrum(&w, &selection)?;
    write_csv(&out.join("spectrum.csv"), &report.cells)?;
    write_json(&out.join("spectrum_summary.json"), &report.summary)?;
    println!(
        "profile: {}x{} total energy {:.6e}, top-{} capture {:.4}",
        w.rows(),
        w.cols(),
        report.summary.total_energy,
        selection.n,
        report.summary.top_n_capture
    );
    Ok(true)
}

fn budget(out: &Path, model: &str, n: usize, rank: usize) -> Result<bool> {
    let cfg = preset(model)?;
    let reports = vec![
        accounting::ssh_budget(&cfg, n)?,
        accounting::fourierft_budget(&cfg, n)?,
        accounting::lora_budget(&cfg, rank)?,
        accounting::full_budget(&cfg),
    ];
    let (ssh, fourier): (f64, f64) = cfg
        .layer_shapes
        .iter()
        .map(|&(d1, d2)| {
            (
                flop_model(SpectralMethod::Ssh, d1, d2, n).total,
                flop_model(SpectralMethod::FourierftModel, d1, d2, n).total,
            )
        })
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let summary = BudgetSummary {
        reports,
        flop_ratio: ssh / fourier,
    };
    write_csv(&out.join("budget.csv"), &summary.reports)?;
    write_json(&out.join("budget.json"), &summary)?;
    for r in &summary.reports {
        println!(
            "budget: {} {:?} setting={} params={} bytes={} flops={:.4e}",
            r.model, r.method, r.setting, r.trainable_params, r.required_bytes, r.flop_estimate
        );
    }
    println!("budget: SSH/FourierFT delta FLOP ratio {:.4}", summary.flop_ratio);
    Ok(true)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = load_config(cli)?;
    ensure_dir(&cli.out)?;
    match &cli.command {
        Command::Recover => recover(&cfg, &cli.out),
        Command::SweepDelta { deltas, repeats } => sweep(&cfg, &cli.out, deltas, *repeats),
        Command::Gradcheck { shapes, trials } => gradcheck(cfg.seed, &cli.out, shapes, *trials),
        Command::Table1 { presets } => table1(&cli.out, presets),
        Command::Profile { weights, n, delta } => profile(&cfg, &cli.out, weights, *n, *delta),
        Command::Budget { model, n, rank } => budget(&cli.out, model, *n, *rank),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
