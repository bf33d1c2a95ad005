//! `mpsic`: run cancellation scenarios and write plot-ready CSV and JSON.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use mpsic_core::config::{ReferenceMode, ScenarioConfig, Seeds};
use mpsic_core::metrics::{constellation_csv, psd_csv};
use mpsic_core::scenario::{
    calibrate_ref1_gain, compare_over_bits, run_scenario, sweep_filter_order,
};
use mpsic_core::Error;

#[derive(Parser)]
#[command(
    name = "mpsic",
    version,
    about = "Photonic-assisted multipath self-interference cancellation simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML, or JSON with a .json extension) or a built-in preset name.
    #[arg(long)]
    config: String,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Replace the configured seeds with ones derived from this value.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps and comparisons.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write gnuplot scripts next to the CSVs.
    #[arg(long)]
    gnuplot: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Full three-stage run: report.json, PSD and constellation CSVs, weights.csv.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Total depth and EVM against RLS order: sweep.csv.
    SweepOrder {
        #[command(flatten)]
        common: Common,
        /// `start:stop:step` (inclusive) or a comma-separated list.
        #[arg(long, default_value = "20:200:20")]
        orders: String,
    },
    /// Dual- versus single-reference depth across DAC resolutions: compare.csv.
    CompareRef {
        #[command(flatten)]
        common: Common,
        /// Comma-separated DAC bits; defaults to the config's compare_bits.
        #[arg(long, value_delimiter = ',')]
        bits: Option<Vec<u32>>,
    },
    /// Search the REF1 gain error that gives a target direct-path depth.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Target direct-path depth, dB.
        #[arg(long)]
        target: f64,
        /// Gain-error search interval in dB, `lo,hi`.
        #[arg(long, value_delimiter = ',', num_args = 2, allow_negative_numbers = true, default_values_t = [-3.0, 3.0])]
        bracket: Vec<f64>,
        #[arg(long, default_value_t = 0.02)]
        tolerance: f64,
    },
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_path: String,
    output_dir: String,
    seed_override: Option<u64>,
    seeds: Seeds,
    timestamp: String,
    tool_version: &'static str,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Config(anyhow::Error),
    Numerical(anyhow::Error),
    Other(anyhow::Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Numerical { .. } => Failure::Numerical(e.into()),
            _ => Failure::Config(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Other(e.into())
    }
}

fn load_config(common: &Common) -> Result<ScenarioConfig, Failure> {
    let path = Path::new(&common.config);
    let cfg = if path.exists() {
        ScenarioConfig::from_path(path)?
    } else if let Ok(cfg) = ScenarioConfig::preset(&common.config) {
        cfg
    } else {
        return Err(Failure::Config(anyhow!(
            "config `{}` is neither a readable file nor a built-in preset",
            common.config
        )));
    };
    Ok(match common.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::Other)
}

fn prepare(common: &Common, command: &str, cfg: &ScenarioConfig) -> Result<(), Failure> {
    if let Some(n) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| Failure::Other(e.into()))?;
    }
    fs::create_dir_all(&common.out)
        .with_context(|| format!("creating {}", common.out.display()))?;
    let manifest = RunManifest {
        command,
        config_path: common.config.clone(),
        output_dir: common.out.display().to_string(),
        seed_override: common.seed,
        seeds: cfg.seeds,
        timestamp: chrono::Utc::now().to_rfc3339(),
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Other(e.into()))?;
    write(&common.out, "manifest.json", &json)
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn cmd_run(common: &Common) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    prepare(common, "run", &cfg)?;
    let report = run_scenario(&cfg)?;
    write(&common.out, "report.json", &report.to_json())?;
    for stage in &report.stages {
        write(
            &common.out,
            &format!("psd_{}.csv", stage.name),
            &psd_csv(&stage.psd),
        )?;
        if let Some(points) = &stage.constellation {
            write(
                &common.out,
                &format!("constellation_{}.csv", stage.name),
                &constellation_csv(points),
            )?;
        }
    }
    write(&common.out, "weights.csv", &report.weights_csv())?;
    if common.gnuplot {
        let names: Vec<&str> = report.stages.iter().map(|s| s.name).collect();
        write(&common.out, "psd.gp", &psd_script(&names))?;
        let with_points: Vec<&str> = report
            .stages
            .iter()
            .filter(|s| s.constellation.is_some())
            .map(|s| s.name)
            .collect();
        if !with_points.is_empty() {
            write(
                &common.out,
                "constellation.gp",
                &constellation_script(&with_points),
            )?;
        }
    }
    let direct = report
        .depth_direct_db
        .map(|d| format!("{d:.2} dB"))
        .unwrap_or_else(|| "n/a".into());
    println!(
        "{}: direct-path depth {direct}, total depth {:.2} dB, EVM after SIC {}",
        cfg.name,
        report.depth_total_db,
        report
            .evm_multipath_pct
            .map(|e| format!("{e:.2}%"))
            .unwrap_or_else(|| "n/a".into())
    );
    Ok(())
}

fn parse_orders(text: &str) -> anyhow::Result<Vec<usize>> {
    let parts: Vec<&str> = text.split(':').collect();
    let orders: Vec<usize> = if parts.len() == 3 {
        let n: Vec<usize> = parts
            .iter()
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .context("orders range must be start:stop:step")?;
        if n[2] == 0 {
            return Err(anyhow!("orders step must be >= 1"));
        }
        (n[0]..=n[1]).step_by(n[2]).collect()
    } else {
        text.split(',')
            .map(|p| p.trim().parse())
            .collect::<Result<_, _>>()
            .context("orders must be a comma-separated list of integers")?
    };
    if orders.is_empty() {
        return Err(anyhow!("no orders in `{text}`"));
    }
    Ok(orders)
}

fn cmd_sweep(common: &Common, orders: &str) -> Result<(), Failure> {
    let orders = parse_orders(orders).map_err(Failure::Config)?;
    let cfg = load_config(common)?;
    prepare(common, "sweep-order", &cfg)?;
    let points = sweep_filter_order(&cfg, &orders)?;
    let mut csv = String::from("order,depth_db,evm_pct\n");
    for p in &points {
        let _ = writeln!(csv, "{},{:.4},{}", p.order, p.depth_db, opt_num(p.evm_pct));
    }
    write(&common.out, "sweep.csv", &csv)?;
    if common.gnuplot {
        write(&common.out, "sweep.gp", SWEEP_SCRIPT)?;
    }
    println!("{}: {} orders written to sweep.csv", cfg.name, points.len());
    Ok(())
}

fn cmd_compare(common: &Common, bits: Option<Vec<u32>>) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    let bits = bits.unwrap_or_else(|| cfg.compare_bits.clone());
    prepare(common, "compare-ref", &cfg)?;
    let rows = compare_over_bits(&cfg, &bits)?;
    let mut csv = String::from("mode,bits,depth_db,evm_pct\n");
    for r in &rows {
        let mode = match r.mode {
            ReferenceMode::Dual => "dual",
            ReferenceMode::Single => "single",
        };
        let _ = writeln!(
            csv,
            "{mode},{},{:.4},{}",
            r.bits,
            r.depth_db,
            opt_num(r.evm_pct)
        );
    }
    write(&common.out, "compare.csv", &csv)?;
    if common.gnuplot {
        write(&common.out, "compare.gp", COMPARE_SCRIPT)?;
    }
    println!("{}: {} rows written to compare.csv", cfg.name, rows.len());
    Ok(())
}

fn cmd_calibrate(common: &Common, target: f64, bracket: &[f64], tol: f64) -> Result<(), Failure> {
    let cfg = load_config(common)?;
    prepare(common, "calibrate", &cfg)?;
    let cal = calibrate_ref1_gain(&cfg, target, (bracket[0], bracket[1]), tol)?;
    let json = serde_json::to_string_pretty(&cal).map_err(|e| Failure::Other(e.into()))?;
    write(&common.out, "calibration.json", &json)?;
    println!(
        "{}: ref1_gain_error_db = {} gives direct-path depth {:.3} dB ({} iterations)",
        cfg.name, cal.ref1_gain_error_db, cal.depth_direct_db, cal.iterations
    );
    Ok(())
}

fn psd_script(stages: &[&str]) -> String {
    let plots: Vec<String> = stages
        .iter()
        .map(|s| format!("'psd_{s}.csv' using ($1/1e9):2 with lines title '{s}'"))
        .collect();
    format!(
        "set datafile separator ','\nset key autotitle columnhead\nset xlabel 'Frequency (GHz)'\n\
         set ylabel 'PSD (dBm/Hz)'\nset xrange [0:4]\nplot {}\npause -1\n",
        plots.join(", \\\n     ")
    )
}

fn constellation_script(stages: &[&str]) -> String {
    let plots: Vec<String> = stages
        .iter()
        .map(|s| format!("'constellation_{s}.csv' using 2:3 with dots title '{s}'"))
        .collect();
    format!(
        "set datafile separator ','\nset size square\nset xlabel 'I'\nset ylabel 'Q'\n\
         set xrange [-2:2]\nset yrange [-2:2]\nplot {}\npause -1\n",
        plots.join(", \\\n     ")
    )
}

const SWEEP_SCRIPT: &str = "set datafile separator ','\nset key autotitle columnhead\n\
set xlabel 'RLS order'\nset ylabel 'Depth (dB)'\nset y2label 'EVM (%)'\nset y2tics\n\
plot 'sweep.csv' using 1:2 with linespoints title 'depth', \\\n     'sweep.csv' using 1:3 axes x1y2 with linespoints title 'EVM'\npause -1\n";

const COMPARE_SCRIPT: &str = "set datafile separator ','\nset key autotitle columnhead\n\
set xlabel 'DAC bits'\nset ylabel 'Total depth (dB)'\n\
plot 'compare.csv' using (strcol(1) eq 'dual' ? $2 : 1/0):3 with linespoints title 'dual', \\\n     \
'compare.csv' using (strcol(1) eq 'single' ? $2 : 1/0):3 with linespoints title 'single'\npause -1\n";

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common } => cmd_run(common),
        Command::SweepOrder { common, orders } => cmd_sweep(common, orders),
        Command::CompareRef { common, bits } => cmd_compare(common, bits.clone()),
        Command::Calibrate {
            common,
            target,
            bracket,
            tolerance,
        } => cmd_calibrate(common, *target, bracket, *tolerance),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(e)) => {
            eprintln!("numerical failure: {e:#}");
            ExitCode::from(3)
        }
        Err(Failure::Other(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
