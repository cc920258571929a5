//! Command-line interface for the word-spotting toolkit.

use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use wordspot::arch::{build, gradcheck_miniature, infer_shapes, ArchKind};
use wordspot::data::toy::{generate, ToyCorpusSpec, DEFAULT_WORDS};
use wordspot::data::load_manifest;
use wordspot::diffcore::{op_battery, GradCheckConfig};
use wordspot::harness::{
    append_result, extract_descriptors, load_network, read_results, select_fold, train,
    write_table, FoldRole, ResultEntry, TrainConfig,
};
use wordspot::phoc::PhocConfig;
use wordspot::retrieval::{evaluate, DescriptorSet, QueryMode};

#[derive(Parser)]
#[command(name = "wordspot", version, about = "Segmentation-based handwritten word spotting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network as described by a TOML configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory for the loss log and checkpoints.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Predict attribute descriptors for every image in a manifest.
    Extract {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Descriptor exchange file to write.
        #[arg(long)]
        out: PathBuf,
        /// Keep only one fold of the four-fold page split.
        #[arg(long)]
        fold: Option<usize>,
        /// Which side of the fold to keep.
        #[arg(long, default_value = "test")]
        fold_role: String,
    },
    /// Evaluate a descriptor file with the retrieval protocol.
    Eval {
        /// qbe or qbs.
        #[arg(long)]
        mode: String,
        #[arg(long)]
        descriptors: PathBuf,
        /// One word per line; excluded from the query set (qbs).
        #[arg(long)]
        stop_words: Option<PathBuf>,
        /// Configuration supplying the PHOC parameters for qbs queries;
        /// defaults match the library defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Per-query CSV report.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Append `arch dataset mode mAP` to a results manifest.
        #[arg(long)]
        append: Option<PathBuf>,
        #[arg(long, default_value = "unknown")]
        arch_label: String,
        #[arg(long, default_value = "unknown")]
        dataset_label: String,
    },
    /// Aggregate a results manifest into the benchmark-style table.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the shape table and parameter count of an architecture.
    Inspect {
        /// lenet, tppnet, resnet or densenet.
        #[arg(long)]
        arch: String,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 216)]
        width: usize,
        /// Attribute dimension; defaults to the standard 540.
        #[arg(long)]
        phoc_dim: Option<usize>,
    },
    /// PHOC embedding utilities.
    Phoc {
        #[command(subcommand)]
        command: PhocCommand,
    },
    /// Finite-difference gradient checks of every operation and of
    /// miniature variants of all four architectures.
    Gradcheck {
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        /// Entries sampled per parameter block in the miniature nets.
        #[arg(long, default_value_t = 4)]
        samples_per_block: usize,
        /// Print every parameter block, not just summaries.
        #[arg(long)]
        verbose: bool,
    },
    /// Generate the bundled synthetic toy corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Number of word classes (up to 24 built-in words).
        #[arg(long, default_value_t = 24)]
        classes: usize,
        #[arg(long, default_value_t = 30)]
        train_per_class: usize,
        #[arg(long, default_value_t = 8)]
        test_per_class: usize,
        #[arg(long, default_value_t = 0x70f)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum PhocCommand {
    /// Print the embedding of a word as a line of 0/1 digits.
    Encode {
        word: String,
        #[command(flatten)]
        opts: PhocOpts,
    },
    /// Print the configured embedding dimension.
    Dim {
        #[command(flatten)]
        opts: PhocOpts,
    },
}

#[derive(clap::Args)]
struct PhocOpts {
    /// Comma-separated pyramid levels.
    #[arg(long, default_value = "1,2,4,8")]
    levels: String,
    #[arg(long, default_value = wordspot::phoc::DEFAULT_ALPHABET)]
    alphabet: String,
    #[arg(long, default_value_t = 0.5)]
    overlap_threshold: f64,
}

impl PhocOpts {
    fn config(&self) -> Result<PhocConfig> {
        let levels: Vec<usize> = self
            .levels
            .split(',')
            .map(|s| s.trim().parse::<usize>().context("bad level"))
            .collect::<Result<_>>()?;
        Ok(PhocConfig::new(
            self.alphabet.chars(),
            levels,
            self.overlap_threshold,
        )?)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out_dir } => {
            let config = TrainConfig::from_path(&config)?;
            let outcome = train(&config, &out_dir)?;
            // keep the exact configuration next to the artifacts
            std::fs::write(out_dir.join("config.toml"), config.to_toml())?;
            println!(
                "trained {} iterations; final loss {}; checkpoint {}",
                outcome.iterations,
                outcome.final_loss,
                outcome.checkpoint.display()
            );
        }
        Command::Extract {
            config,
            checkpoint,
            manifest,
            out,
            fold,
            fold_role,
        } => {
            let config = TrainConfig::from_path(&config)?;
            let (network, iteration) = load_network(&config, &checkpoint)?;
            let mut samples = load_manifest(&manifest)?;
            if let Some(fold) = fold {
                let role: FoldRole = fold_role.parse().map_err(anyhow::Error::msg)?;
                samples = select_fold(samples, fold, role)?;
            }
            let phoc = config.phoc_config()?;
            let set = extract_descriptors(&network, &phoc, &samples)?;
            set.to_path(&out)?;
            println!(
                "extracted {} descriptors of dimension {} (checkpoint at iteration {iteration})",
                set.len(),
                set.dim()
            );
        }
        Command::Eval {
            mode,
            descriptors,
            stop_words,
            config,
            out,
            append,
            arch_label,
            dataset_label,
        } => {
            let mode: QueryMode = mode.parse().map_err(anyhow::Error::msg)?;
            let set = DescriptorSet::from_path(&descriptors)?;
            let phoc = match &config {
                Some(path) => TrainConfig::from_path(path)?.phoc_config()?,
                None => PhocConfig::default(),
            };
            let stop = match &stop_words {
                Some(path) => Some(load_stop_words(path, &phoc)?),
                None => None,
            };
            let report = evaluate(&set, mode, &phoc, stop.as_ref())?;
            if let Some(out) = &out {
                report.to_path(out)?;
            }
            if let Some(append) = &append {
                append_result(
                    append,
                    &ResultEntry {
                        arch: arch_label,
                        dataset: dataset_label,
                        mode,
                        map: report.mean_average_precision,
                    },
                )?;
            }
            println!(
                "{mode} mAP {} over {} queries",
                report.mean_average_precision,
                report.queries.len()
            );
        }
        Command::Report { results, out } => {
            let entries = read_results(&results)?;
            match out {
                Some(path) => {
                    let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
                    write_table(&entries, &mut file)?;
                    file.flush()?;
                    println!("wrote {}", path.display());
                }
                None => write_table(&entries, std::io::stdout().lock())?,
            }
        }
        Command::Inspect {
            arch,
            height,
            width,
            phoc_dim,
        } => {
            let kind: ArchKind = arch.parse()?;
            let dim = phoc_dim.unwrap_or_else(|| PhocConfig::default().dim());
            let graph = build(kind, dim);
            let table = infer_shapes(&graph, height, width)?;
            println!("{} ({} -> {dim} attributes)", graph.name, kind);
            println!("{table}");
            println!("convolutional depth: {}", graph.conv_depth());
        }
        Command::Phoc { command } => match command {
            PhocCommand::Encode { word, opts } => {
                let config = opts.config()?;
                let vector = config.encode_raw(&word)?;
                let line: String = vector
                    .bits()
                    .iter()
                    .map(|&b| if b == 1 { '1' } else { '0' })
                    .collect();
                println!("{line}");
            }
            PhocCommand::Dim { opts } => {
                println!("{}", opts.config()?.dim());
            }
        },
        Command::Gradcheck {
            tolerance,
            samples_per_block,
            verbose,
        } => {
            let mut failed = false;
            let op_config = GradCheckConfig {
                tolerance,
                ..GradCheckConfig::default()
            };
            for (name, report) in op_battery(&op_config)? {
                if verbose {
                    println!("{name}\n{report}");
                } else {
                    print_summary(&name, report.max_rel_error(), tolerance, report.passed());
                }
                failed |= !report.passed();
            }
            let mini_config = GradCheckConfig {
                tolerance,
                samples_per_block,
                ..GradCheckConfig::default()
            };
            for kind in ArchKind::ALL {
                let report = gradcheck_miniature(kind, &mini_config)?;
                let name = format!("miniature {kind}");
                if verbose || !report.passed() {
                    println!("{name}\n{report}");
                } else {
                    print_summary(&name, report.max_rel_error(), tolerance, report.passed());
                }
                failed |= !report.passed();
            }
            if failed {
                bail!("gradient check failed");
            }
        }
        Command::Synth {
            out,
            classes,
            train_per_class,
            test_per_class,
            seed,
        } => {
            if classes == 0 || classes > DEFAULT_WORDS.len() {
                bail!("classes must be in 1..={}", DEFAULT_WORDS.len());
            }
            let spec = ToyCorpusSpec {
                words: DEFAULT_WORDS[..classes].iter().map(|w| w.to_string()).collect(),
                train_per_class,
                test_per_class,
                seed,
                ..ToyCorpusSpec::default()
            };
            let corpus = generate(&spec, &out)?;
            println!(
                "wrote {} and {}",
                corpus.train_manifest.display(),
                corpus.test_manifest.display()
            );
        }
    }
    Ok(())
}

fn print_summary(name: &str, max_rel: f64, tolerance: f64, passed: bool) {
    println!(
        "{:<44} max rel err {:>9.3e} (tol {:.0e}) {}",
        name,
        max_rel,
        tolerance,
        if passed { "ok" } else { "FAILED" }
    );
}

/// Stop words are normalized with the active PHOC alphabet so they match
/// the normalized transcriptions they are compared against.
fn load_stop_words(path: &PathBuf, phoc: &PhocConfig) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading stop words from {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| phoc.normalize(l.trim()))
        .filter(|l| !l.is_empty())
        .collect())
}
