use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use mspum::coefficient::ArcCoefficientParams;
use mspum::experiment::{run_diagnostics, run_experiment, ExperimentConfig, SweepCell};
use mspum::Error;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Export {
    Vtk,
    Pgm,
    Csv,
}

/// Multiscale partition of unity experiments on the unit square.
#[derive(Debug, Parser)]
#[command(name = "mspum", version)]
struct Cli {
    /// JSON configuration file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fine mesh size h = 2^-FINE_EXP.
    #[arg(long)]
    fine_exp: Option<u32>,
    /// Comma-separated H_exp:m cells, e.g. "1:0,2:1".
    #[arg(long)]
    sweep: Option<String>,
    /// Oscillation scale of the arc coefficient.
    #[arg(long)]
    eps: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    /// Extra outputs; may be repeated.
    #[arg(long, value_enum)]
    export: Vec<Export>,
    /// Use whole-domain patches for every corrector.
    #[arg(long)]
    ideal: bool,
    /// Run the property diagnostics instead of the sweep.
    #[arg(long)]
    diagnostics: bool,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(e) = cli.fine_exp {
        cfg.fine_exp = e;
    }
    if let Some(s) = &cli.sweep {
        cfg.sweep = SweepCell::parse_list(s)?;
    }
    if let Some(eps) = cli.eps {
        cfg.coefficient = ArcCoefficientParams::with_eps(eps);
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    for e in &cli.export {
        match e {
            Export::Vtk => cfg.export.vtk = true,
            Export::Pgm => cfg.export.pgm = true,
            Export::Csv => cfg.export.decay_csv = true,
        }
    }
    cfg.ideal |= cli.ideal;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, cfg: &ExperimentConfig) -> Result<bool, Error> {
    if cli.diagnostics {
        let report = run_diagnostics(cfg)?;
        for (name, check) in &report.checks {
            let value = check.value.map_or_else(String::new, |v| format!(" {v:.3e}"));
            println!("{name}: {:?}{value}", check.status);
        }
        return Ok(report.passed());
    }
    let outcome = run_experiment(cfg)?;
    for r in &outcome.rows {
        let m = r.m.map_or_else(|| "ideal".into(), |m| m.to_string());
        println!(
            "H={:<8} m={:<5} rel_l2={:.6} rel_h1={:.6} rel_h1_semi={:.6}",
            r.coarse_h, m, r.rel_l2, r.rel_h1, r.rel_h1_semi
        );
    }
    for c in outcome.cells.iter().filter(|c| c.error.is_some()) {
        eprintln!("cell {}:{} failed: {}", c.coarse_exp, c.m, c.error.as_deref().unwrap_or_default());
    }
    Ok(outcome.all_converged())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads.unwrap_or(0)).build();
    let result = match pool {
        Ok(pool) => pool.install(|| run(&cli, &cfg)),
        Err(e) => Err(Error::Config(e.to_string())),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
