use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use nirbench::data::write_dataset_csv;
use nirbench::manifest::BenchmarkManifest;
use nirbench::report::{write_artifacts, ReportOptions};
use nirbench::runner::{run, RunOptions};
use nirbench::search::{Family, SearchSpace};
use nirbench::synthetic::DerivativeScatter;

#[derive(Parser)]
#[command(name = "nirbench", version, about = "Spectral calibration benchmark engine")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every (dataset, model) search described by a manifest
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// comma-separated model ids
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        /// glob over dataset names
        #[arg(long)]
        datasets: Option<String>,
        /// keep completed cells from an earlier run in the same directory
        #[arg(long)]
        resume: bool,
    },
    /// Rebuild tables, rank statistics and diagrams of a run directory
    Report {
        #[arg(long = "run")]
        run_dir: PathBuf,
        #[arg(long)]
        reference: Option<String>,
        /// also compute the exact permutation Friedman p-value (small tables)
        #[arg(long)]
        exact_friedman: bool,
    },
    /// Print the preprocessing search space of a family
    ListPipelines { family: String },
    /// Write a synthetic derivative-plus-scatter dataset and a manifest
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2)]
        datasets: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn synth(out: &Path, count: usize, seed: u64) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = String::from("models = [\"pls\", \"ridge\"]\nseed = 0\n");
    for i in 0..count {
        let name = format!("synthetic_{i}");
        let ds = DerivativeScatter {
            seed: seed + i as u64,
            ..Default::default()
        }
        .dataset(&name, &format!("db{i}"))?;
        write_dataset_csv(&ds, &out.join(format!("{name}.csv")), "y")?;
        manifest.push_str(&format!(
            "\n[[datasets]]\nname = \"{name}\"\ndatabase = \"db{i}\"\npath = \"{name}.csv\"\ntarget = \"y\"\ntask = \"regression\"\nsplit = {{ method = \"spxy\", test_fraction = 0.25 }}\n"
        ));
    }
    std::fs::write(out.join("manifest.toml"), manifest)?;
    println!("wrote {count} datasets and manifest.toml to {}", out.display());
    Ok(())
}

fn dataset_filter(config: &Path, pattern: &str) -> anyhow::Result<Vec<String>> {
    let pat = glob::Pattern::new(pattern).with_context(|| format!("bad dataset pattern {pattern:?}"))?;
    let manifest = BenchmarkManifest::load(config)?;
    let names: Vec<String> = manifest
        .datasets
        .iter()
        .map(|d| d.name.clone())
        .filter(|n| pat.matches(n))
        .collect();
    if names.is_empty() {
        bail!("no dataset matches {pattern:?}");
    }
    Ok(names)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run {
            config,
            out,
            workers,
            seed,
            models,
            datasets,
            resume,
        } => {
            let datasets = match datasets.map(|p| dataset_filter(&config, &p)).transpose() {
                Ok(d) => d,
                Err(e) => {
                    eprintln!("configuration error: {e:#}");
                    return ExitCode::from(1);
                }
            };
            let opts = RunOptions {
                workers,
                seed,
                models,
                datasets,
                resume,
                ..RunOptions::new(config, out)
            };
            match run(&opts) {
                Ok(summary) => {
                    println!(
                        "cells: {} ok, {} failed, {} unavailable ({} resumed)",
                        summary.ok, summary.failed, summary.unavailable, summary.resumed
                    );
                    ExitCode::from(summary.exit_code() as u8)
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Cmd::Report {
            run_dir,
            reference,
            exact_friedman,
        } => {
            let opts = ReportOptions {
                reference,
                exact_friedman,
            };
            match write_artifacts(&run_dir, &opts) {
                Ok(summary) => {
                    for a in &summary.analyses {
                        println!(
                            "{}: B={} k={} chi2={:.4} p={:.4e} CD={}",
                            a.task.as_str(),
                            a.n_databases,
                            a.n_models,
                            a.statistic,
                            a.p_value,
                            a.cd.map(|c| format!("{c:.3}")).unwrap_or_else(|| "n/a".into())
                        );
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("report failed: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Cmd::ListPipelines { family } => match family.parse::<Family>() {
            Ok(f) => {
                print!("{}", SearchSpace::for_family(f).describe());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}\nusage: nirbench list-pipelines <linear|tabular>");
                ExitCode::from(1)
            }
        },
        Cmd::Synth { out, datasets, seed } => match synth(&out, datasets, seed) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("{e:#}");
                ExitCode::from(3)
            }
        },
    }
}
