use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use heviper_cli::commands::{
    cmd_build_db, cmd_build_height_db, cmd_evaluate, cmd_gen_synthetic, cmd_query, write_report,
};
use heviper_cli::{CliResult, RunConfig};

#[derive(Parser)]
#[command(
    name = "heviper",
    version,
    about = "Height-aware visual place recognition: partitioned retrieval engine"
)]
struct Cli {
    /// TOML run configuration (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Overrides the configured seed for all synthesis and sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for evaluation (1 = sequential).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    /// Print machine-readable JSON instead of text summaries.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the height-partitioned place database from a manifest.
    BuildDb {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// HEVD file with precomputed place descriptors (bypasses the stub).
        #[arg(long)]
        descriptors: Option<PathBuf>,
    },
    /// Build the compact height database from a manifest.
    BuildHeightDb {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// HEVD file with precomputed height descriptors.
        #[arg(long)]
        descriptors: Option<PathBuf>,
    },
    /// Run one query image through the two-stage pipeline.
    Query {
        image: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        height_db: PathBuf,
        /// Height candidates used for sub-database selection.
        #[arg(long)]
        k_height: Option<usize>,
        /// Place results to return.
        #[arg(long)]
        k_place: Option<usize>,
        /// Bypass height estimation and search the whole database.
        #[arg(long)]
        full: bool,
    },
    /// Evaluate a query manifest and write report files.
    Evaluate {
        manifest: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        height_db: PathBuf,
        /// Output directory for report.json / report.txt.
        #[arg(long)]
        out: PathBuf,
        /// Also write report.csv (one row per recall cell).
        #[arg(long)]
        csv: bool,
    },
    /// Generate the seeded synthetic dataset (images + manifests + config).
    GenSynthetic {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.adapter.seed = seed;
    }
    Ok(config)
}

fn run(cli: &Cli) -> CliResult<()> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::BuildDb {
            manifest,
            out,
            descriptors,
        } => {
            let summary = cmd_build_db(manifest, &config, out, descriptors.as_deref())?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            } else {
                println!(
                    "wrote {} ({} entries)",
                    summary.out_path.display(),
                    summary.total
                );
                for (i, n) in summary.per_level.iter().enumerate() {
                    println!("  level {:>2}: {n}", i + 1);
                }
                if !summary.rejected_ids.is_empty() {
                    println!("  rejected out-of-range ids: {:?}", summary.rejected_ids);
                }
            }
        }
        Command::BuildHeightDb {
            manifest,
            out,
            descriptors,
        } => {
            let summary = cmd_build_height_db(manifest, &config, out, descriptors.as_deref())?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&summary).unwrap());
            } else {
                println!(
                    "wrote {} ({} height entries)",
                    summary.out_path.display(),
                    summary.total
                );
                for (i, n) in summary.per_level.iter().enumerate() {
                    println!("  level {:>2}: {n}", i + 1);
                }
                if !summary.rejected_ids.is_empty() {
                    println!("  rejected out-of-range ids: {:?}", summary.rejected_ids);
                }
            }
        }
        Command::Query {
            image,
            db,
            height_db,
            k_height,
            k_place,
            full,
        } => {
            let output = cmd_query(
                image,
                db,
                height_db,
                &config,
                k_height.unwrap_or(config.retrieval.k_height),
                k_place.unwrap_or(config.retrieval.k_place),
                *full,
            )?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&output).unwrap());
            } else {
                println!("query: {} ({})", output.image.display(), output.mode);
                if !output.result.height_candidates.candidates.is_empty() {
                    println!("height candidates (label m, score):");
                    for c in output
                        .result
                        .height_candidates
                        .candidates
                        .iter()
                        .take(output.k_height.max(5))
                    {
                        println!("  {:>8.1}  {:.4}  (entry {})", c.label_m, c.score, c.entry_id);
                    }
                }
                let levels: Vec<String> = output
                    .result
                    .selected_levels
                    .iter()
                    .map(|l| l.to_string())
                    .collect();
                println!("selected levels: {{{}}}", levels.join(", "));
                println!("searched {} database entries", output.result.searched_count);
                println!("top places (id, score):");
                for e in &output.result.place_ranking.entries {
                    println!("  {:>8}  {:.4}", e.id, e.score);
                }
            }
        }
        Command::Evaluate {
            manifest,
            db,
            height_db,
            out,
            csv,
        } => {
            let report = cmd_evaluate(manifest, db, height_db, &config, cli.threads)?;
            let json_path = write_report(&report, out, *csv)?;
            if cli.json {
                println!("{}", serde_json::to_string_pretty(&report).unwrap());
            } else {
                print!("{}", heviper_cli::commands::report_text(&report));
                println!("report written to {}", json_path.display());
            }
        }
        Command::GenSynthetic { out } => {
            let outcome = cmd_gen_synthetic(&config, config.adapter.seed, out)?;
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({
                        "out_dir": outcome.out_dir,
                        "db_images": outcome.db_rows,
                        "query_images": outcome.query_rows,
                        "levels": outcome.levels,
                    })
                );
            } else {
                println!(
                    "generated {} database images and {} queries over {} levels in {}",
                    outcome.db_rows,
                    outcome.query_rows,
                    outcome.levels,
                    outcome.out_dir.display()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("HEVIPER_LOG")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
