//! Command-line harness over the library pipeline.
//!
//! Exit codes: 0 success, 1 validation failure, 2 IO error, 3 numerical
//! abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use multisym::config::ExperimentConfig;
use multisym::linear_theory;
use multisym::model::Hypothesis;
use multisym::pipeline::{self, OutputLayout};

#[derive(Parser)]
#[command(
    name = "multisym",
    about = "Train invariant/equivariant contrastive members on synthetic symmetry datasets and ensemble them"
)]
struct Cli {
    /// Experiment configuration file (JSON); defaults derive from --seed.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory for all artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed when no config file is given.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,

    /// Worker threads for member-parallel stages (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the dataset and write train/val/test files.
    GenData,
    /// Pretrain pool members and write checkpoints plus loss logs.
    Pretrain {
        /// Restrict to one hypothesis (invariant | equivariant).
        #[arg(long)]
        hypothesis: Option<String>,
    },
    /// Fit classifiers from the checkpoints and fill the registry.
    FitPredict,
    /// Build greedy and random ensembles and report test accuracies.
    Ensemble,
    /// Compute the metric suite for a member set (default: greedy mixed).
    Metrics {
        /// Comma-separated member ids; defaults to the greedy mixed
        /// ensemble at the largest configured size.
        #[arg(long)]
        members: Option<String>,
    },
    /// Verify the closed-form least-squares heads against the stacked
    /// solver and print a JSON report.
    TheoryCheck {
        #[arg(long, default_value_t = 3)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        trials: usize,
    },
    /// Run the whole pipeline and write the combined report.
    Report,
}

fn load_config(cli: &Cli) -> multisym::Result<ExperimentConfig> {
    match &cli.config {
        Some(path) => ExperimentConfig::load(path),
        None => Ok(ExperimentConfig::for_seed(cli.seed)),
    }
}

fn run(cli: &Cli) -> multisym::Result<()> {
    if let Some(jobs) = cli.jobs {
        // A failed build just means a pool already exists (e.g. in tests).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }
    let layout = OutputLayout::new(&cli.out);
    match &cli.command {
        Command::GenData => {
            let cfg = load_config(cli)?;
            let summary = pipeline::stage_gen_data(&cfg, &layout)?;
            println!("{}", serde_json::to_string_pretty(&summary).unwrap());
        }
        Command::Pretrain { hypothesis } => {
            let cfg = load_config(cli)?;
            let filter = match hypothesis.as_deref() {
                None => None,
                Some(s) => Some(s.parse::<Hypothesis>()?),
            };
            let ids = pipeline::stage_pretrain(&cfg, &layout, filter)?;
            for id in ids {
                println!("pretrained {id}");
            }
        }
        Command::FitPredict => {
            let cfg = load_config(cli)?;
            let ids = pipeline::stage_fit_predict(&cfg, &layout)?;
            for id in ids {
                println!("predicted {id} (val + test)");
            }
        }
        Command::Ensemble => {
            let cfg = load_config(cli)?;
            let report = pipeline::stage_ensemble(&cfg, &layout)?;
            print_ensemble_table(&report);
        }
        Command::Metrics { members } => {
            let cfg = load_config(cli)?;
            let ids: Vec<String> = match members {
                Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
                None => {
                    let report = pipeline::stage_ensemble(&cfg, &layout)?;
                    report
                        .greedy
                        .iter()
                        .find(|row| row.pool == "eq_inv")
                        .or_else(|| report.greedy.first())
                        .map(|row| row.sequence.clone())
                        .unwrap_or_default()
                }
            };
            if ids.is_empty() {
                return Err(multisym::Error::InvalidArgument(
                    "no members to evaluate".into(),
                ));
            }
            let report = pipeline::stage_metrics(&cfg, &layout, &ids, "cli")?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
        }
        Command::TheoryCheck { seed, trials } => {
            let report = linear_theory::verify_closed_forms(*seed, *trials)?;
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            let worst = report.max_rel_error_inv.max(report.max_rel_error_equiv);
            if worst > 1e-6 {
                return Err(multisym::Error::InvalidArgument(format!(
                    "closed forms diverge from the stacked solver: {worst:e}"
                )));
            }
        }
        Command::Report => {
            let cfg = load_config(cli)?;
            let report = pipeline::run_full(&cfg, &layout)?;
            print_full_summary(&report);
        }
    }
    Ok(())
}

fn print_ensemble_table(report: &pipeline::EnsembleReport) {
    println!("leading hypothesis: {}", report.leading.name());
    println!("\ngreedy ensembles (test accuracy by size):");
    for row in &report.greedy {
        let cells: Vec<String> = row
            .sizes
            .iter()
            .zip(&row.test_accuracy)
            .map(|(m, acc)| format!("M={m}: {:.4}", acc))
            .collect();
        println!("  {:<22} {}", row.pool, cells.join("  "));
        println!("    sequence: {}", row.sequence.join(", "));
    }
    println!("\nrandom ensembles (mean ± std over repeats):");
    for row in &report.random {
        let cells: Vec<String> = row
            .sizes
            .iter()
            .zip(row.mean_accuracy.iter().zip(&row.std_accuracy))
            .map(|(m, (mean, std))| format!("M={m}: {:.4}±{:.4}", mean, std))
            .collect();
        println!("  {:<22} {}", row.pool, cells.join("  "));
    }
}

fn print_full_summary(report: &pipeline::FullReport) {
    println!("config hash: {}", report.config_hash);
    println!(
        "dataset: {} classes, {}/{}/{} train/val/test",
        report.dataset.class_count,
        report.dataset.train_items,
        report.dataset.val_items,
        report.dataset.test_items
    );
    println!("\nmembers (val / test accuracy):");
    for member in &report.members {
        println!(
            "  {:<20} val {:.4}  test {:.4}",
            member.model_id, member.val_accuracy, member.test_accuracy
        );
    }
    println!("\ntransformation probes (oriented test subset):");
    for probe in &report.probes {
        println!("  {:<20} {:.4}", probe.model_id, probe.accuracy);
    }
    if let Some((better, worse, equal)) = report.dominance_eq_vs_inv {
        println!(
            "\nper-class dominance eq vs inv: {:.1}% / {:.1}% / {:.1}% (better/worse/equal)",
            100.0 * better,
            100.0 * worse,
            100.0 * equal
        );
    }
    print_ensemble_table(&report.ensembles);
    println!("\ndiversity (fixed member sets on test):");
    for row in &report.diversity {
        println!(
            "  {:<8} incons {:.4}  var_logits {:.4}  var_probs {:.5}  kl {:.4}",
            row.pool,
            row.error_inconsistency,
            row.variance_logits,
            row.variance_probs,
            row.pairwise_kl
        );
    }
    println!(
        "\nheadline greedy mixed ensemble: accuracy {:.4}, nll {:.4}, auuqc {:.4}",
        report.headline_metrics.ensemble_accuracy,
        report.headline_metrics.nll,
        report.headline_metrics.auuqc
    );
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
