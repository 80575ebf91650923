use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use layerpot::harness::{configure_threads, load_summary, regression_compare, run, ExperimentConfig, Pole, Task};
use layerpot::{Error, Result};

/// Layer potentials and fundamental solutions on a periodic grid.
///
/// Exit status: 0 when every invariant holds, 1 on an invariant failure or
/// baseline drift, 2 on configuration errors and baseline mismatches.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Cli {
    /// verify, dirichlet, neumann, kkpt-sweep, estimates, fundsol or tdep-fundsol
    task: String,
    #[arg(long)]
    config: PathBuf,
    /// Bundle directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Summary (or bundle directory) of an earlier run with the same config.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Coefficient family override, e.g. `hermitian_random`.
    #[arg(long)]
    family: Option<String>,
    /// Pole override as `t0,x0_index`.
    #[arg(long)]
    pole: Option<String>,
    /// Comma-separated annulus radii override.
    #[arg(long)]
    radii: Option<String>,
    /// Upper truncation height for tdep-fundsol.
    #[arg(long)]
    tmax: Option<f64>,
}

fn parse_list(field: &str, raw: &str) -> Result<Vec<f64>> {
    raw.split(',').map(|s| s.trim().parse::<f64>().map_err(|e| Error::config(field, format!("`{s}`: {e}")))).collect()
}

fn apply_overrides(cli: &Cli, config: &mut ExperimentConfig) -> Result<()> {
    if let Some(f) = &cli.family {
        config.family.family = serde_json::from_value(serde_json::Value::String(f.clone())).map_err(|e| Error::config("family", e.to_string()))?;
    }
    if let Some(p) = &cli.pole {
        let (t0, x0) = p.split_once(',').ok_or_else(|| Error::config("pole", "expected `t0,x0_index`"))?;
        let t0 = t0.trim().parse().map_err(|e| Error::config("pole.t0", format!("{e}")))?;
        let x0 = x0.trim().parse().map_err(|e| Error::config("pole.x0", format!("{e}")))?;
        let column = config.pole.as_ref().map(|p| p.column).unwrap_or(0);
        config.pole = Some(Pole { t0, x0, column });
    }
    if let Some(r) = &cli.radii {
        config.radii = Some(parse_list("radii", r)?);
    }
    if let Some(t) = cli.tmax {
        config.t_max = Some(t);
    }
    Ok(())
}

fn execute(cli: &Cli) -> Result<bool> {
    let task: Task = cli.task.parse()?;
    configure_threads()?;
    let mut config = ExperimentConfig::load(&cli.config)?;
    apply_overrides(cli, &mut config)?;
    let bundle = run(task, &config)?;
    let out = cli.out.clone().or_else(|| config.out.clone()).unwrap_or_else(|| PathBuf::from(format!("out-{task}")));
    bundle.write(&out)?;
    let s = &bundle.summary;
    for i in &s.invariants {
        println!("{} {:<40} {:>12.4e} (tol {:.1e})", if i.pass { "PASS" } else { "FAIL" }, i.name, i.value, i.tolerance);
    }
    let mut ok = s.pass;
    if let Some(b) = &cli.baseline {
        let baseline = load_summary(b)?;
        let report = regression_compare(s, &baseline)?;
        for d in report.constants.iter().chain(&report.slopes) {
            println!("DRIFT {:<39} {:.4e} -> {:.4e}", d.key, d.baseline, d.current);
        }
        for k in &report.missing {
            println!("DRIFT {k:<39} present in only one summary");
        }
        ok &= report.is_clean();
    }
    println!("{} {} -> {}", if ok { "ok" } else { "failed" }, task, out.display());
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e @ (Error::ConfigInvalid { .. } | Error::BaselineMismatch { .. })) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
