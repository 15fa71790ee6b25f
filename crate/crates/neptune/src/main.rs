//! `neptune` command-line interface.
//!
//! Subcommands: `train`, `eval`, `score`, `export-vocab`. Exit codes are a
//! stable scripting contract: 0 success, 1 usage or config error, 2 data
//! error (datasets, checkpoints, paths), 3 numerical abort during training.
//! Log verbosity is controlled by the `RUST_LOG` environment variable only.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use neptune::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
use neptune::data::KnowledgeGraph;
use neptune::eval::{evaluate, ScoreOpts, Split};
use neptune::manifest::{merge_config, RunManifest};
use neptune::model::{relation_plane, score_all_tails_with_plane, Activation};
use neptune::train::{train, TrainError};

#[derive(Parser)]
#[command(
    name = "neptune",
    version,
    about = "Knowledge-graph link prediction with nonlinear Tucker scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, log, and run manifest.
    Train(TrainArgs),
    /// Evaluate a checkpoint with filtered MRR and Hits@{1,3,10}.
    Eval(EvalArgs),
    /// Rank candidate tails for one (head, relation) query.
    Score(ScoreArgs),
    /// Dump a vocabulary as id<TAB>label lines.
    ExportVocab(ExportVocabArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory containing train.txt, valid.txt, test.txt.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint.nptn, train.log, manifest.txt.
    #[arg(long)]
    out: PathBuf,
    /// Key-value config file; CLI flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lr_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    dropout_input: Option<f64>,
    #[arg(long)]
    dropout_hidden: Option<f64>,
    #[arg(long)]
    dropout_output: Option<f64>,
    #[arg(long)]
    label_smoothing: Option<f64>,
    /// identity, relu, or tanh.
    #[arg(long)]
    activation: Option<Activation>,
    #[arg(long)]
    batch_norm: Option<bool>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    adam_beta1: Option<f64>,
    #[arg(long)]
    adam_beta2: Option<f64>,
    #[arg(long)]
    adam_eps: Option<f64>,
    /// Compute validation MRR every N epochs (0 = never).
    #[arg(long)]
    valid_every: Option<usize>,
    /// Also keep the best-validation checkpoint (checkpoint-best.nptn).
    #[arg(long)]
    keep_best: Option<bool>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// train, valid, or test.
    #[arg(long, default_value = "test")]
    split: Split,
    /// Write per-triple ranks as head<TAB>relation<TAB>tail<TAB>rank.
    #[arg(long)]
    dump_ranks: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Head entity label.
    #[arg(long)]
    head: String,
    /// Relation label (append _reciprocal for the inverse direction).
    #[arg(long)]
    relation: String,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
    /// Annotate candidates already known to be true tails.
    #[arg(long, default_value_t = false)]
    mark_filtered: bool,
}

#[derive(Args)]
struct ExportVocabArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// entity or relation.
    #[arg(long, default_value = "entity")]
    kind: String,
}

/// Failures mapped onto the exit-code contract.
enum CliError {
    Usage(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    ExitCode::SUCCESS
                }
                _ => ExitCode::from(1),
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Score(args) => cmd_score(args),
        Command::ExportVocab(args) => cmd_export_vocab(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn load_graph(dir: &Path) -> Result<KnowledgeGraph, CliError> {
    KnowledgeGraph::load_dir(dir).map_err(data_err)
}

fn load_validated_checkpoint(path: &Path, g: &KnowledgeGraph) -> Result<Checkpoint, CliError> {
    let cp = load_checkpoint(path).map_err(data_err)?;
    cp.validate_against(g).map_err(data_err)?;
    Ok(cp)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let mut overrides: Vec<(&'static str, String)> = Vec::new();
    macro_rules! push_flag {
        ($key:literal, $value:expr) => {
            if let Some(v) = $value {
                overrides.push(($key, v.to_string()));
            }
        };
    }
    push_flag!("d", args.d);
    push_flag!("k", args.k);
    push_flag!("lr", args.lr);
    push_flag!("lr_decay", args.lr_decay);
    push_flag!("epochs", args.epochs);
    push_flag!("batch_size", args.batch_size);
    push_flag!("dropout_input", args.dropout_input);
    push_flag!("dropout_hidden", args.dropout_hidden);
    push_flag!("dropout_output", args.dropout_output);
    push_flag!("label_smoothing", args.label_smoothing);
    push_flag!("activation", args.activation);
    push_flag!("batch_norm", args.batch_norm);
    push_flag!("seed", args.seed);
    push_flag!("adam_beta1", args.adam_beta1);
    push_flag!("adam_beta2", args.adam_beta2);
    push_flag!("adam_eps", args.adam_eps);
    push_flag!("valid_every", args.valid_every);
    push_flag!("keep_best", args.keep_best);

    let cfg = merge_config(args.config.as_deref(), &overrides)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let t_load = Instant::now();
    let graph = load_graph(&args.data)?;
    let load_s = t_load.elapsed().as_secs_f64();
    log::info!(
        "loaded {}: {} entities, {} relations ({} raw), {} augmented train triples",
        args.data.display(),
        graph.num_entities(),
        graph.num_relations(),
        graph.raw_relation_count(),
        graph.train.len()
    );

    fs::create_dir_all(&args.out).map_err(data_err)?;

    let t_train = Instant::now();
    let run = train(&graph, &cfg).map_err(|e| match e {
        TrainError::NonFiniteLoss { .. } => CliError::Numeric(e.to_string()),
        TrainError::InvalidConfig(_) => CliError::Usage(e.to_string()),
        TrainError::EmptyTrainSplit => CliError::Data(e.to_string()),
    })?;
    let train_s = t_train.elapsed().as_secs_f64();

    let t_save = Instant::now();
    let checkpoint_path = args.out.join("checkpoint.nptn");
    save_checkpoint(&checkpoint_path, &run.params, &run.adam, &cfg, &graph).map_err(data_err)?;
    if let Some(best) = &run.best {
        let best_path = args.out.join("checkpoint-best.nptn");
        save_checkpoint(&best_path, &best.params, &best.adam, &cfg, &graph).map_err(data_err)?;
        log::info!(
            "best validation MRR {:.4} at epoch {} -> {}",
            best.valid_mrr,
            best.epoch,
            best_path.display()
        );
    }

    let log_path = args.out.join("train.log");
    let mut log_file = fs::File::create(&log_path).map_err(data_err)?;
    for e in &run.epochs {
        match e.valid_mrr {
            Some(mrr) => writeln!(log_file, "{}\t{:.6}\t{:.6}", e.epoch, e.mean_loss, mrr),
            None => writeln!(log_file, "{}\t{:.6}", e.epoch, e.mean_loss),
        }
        .map_err(data_err)?;
    }
    let save_s = t_save.elapsed().as_secs_f64();

    let manifest = RunManifest {
        config: cfg,
        data_dir: args.data.clone(),
        out_dir: args.out.clone(),
        dataset_checksums: RunManifest::checksum_dataset(&args.data).map_err(data_err)?,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        timings: vec![
            ("load".into(), load_s),
            ("train".into(), train_s),
            ("save".into(), save_s),
        ],
    };
    manifest
        .write(&args.out.join("manifest.txt"))
        .map_err(data_err)?;

    let final_loss = run.epochs.last().map(|e| e.mean_loss);
    println!(
        "trained {} epochs{} -> {}",
        run.epochs.len(),
        final_loss.map_or(String::new(), |l| format!(", final mean loss {:.6}", l)),
        checkpoint_path.display()
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.data)?;
    let cp = load_validated_checkpoint(&args.checkpoint, &graph)?;
    let opts = ScoreOpts {
        activation: cp.config.activation,
        batch_norm: cp.config.batch_norm,
    };
    if args.split.triples(&graph).is_empty() {
        return Err(CliError::Data(format!(
            "{} split is empty",
            args.split.name()
        )));
    }
    let report = evaluate(&cp.params, &graph, args.split, opts);
    println!("{}", report.summary_line(args.split.name()));

    if let Some(path) = args.dump_ranks {
        let mut out = fs::File::create(&path).map_err(data_err)?;
        for (t, rank) in &report.per_triple_ranks {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                graph.entity_label(t.head),
                graph.relation_label(t.relation),
                graph.entity_label(t.tail),
                rank
            )
            .map_err(data_err)?;
        }
    }
    Ok(())
}

/// Closest vocabulary labels by edit distance, for unknown-label errors.
fn nearest_labels<'a>(query: &str, labels: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut scored: Vec<(usize, &str)> = labels
        .map(|l| (strsim::levenshtein(query, l), l))
        .collect();
    scored.sort_by_key(|&(d, l)| (d, l.to_string()));
    scored.into_iter().take(3).map(|(_, l)| l).collect()
}

fn cmd_score(args: ScoreArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.data)?;
    let cp = load_validated_checkpoint(&args.checkpoint, &graph)?;

    let head = graph.entity_id(&args.head).ok_or_else(|| {
        CliError::Data(format!(
            "unknown entity '{}'; nearest: {}",
            args.head,
            nearest_labels(&args.head, graph.entity_labels().iter().map(String::as_str))
                .join(", ")
        ))
    })?;
    let relation = graph.relation_id(&args.relation).ok_or_else(|| {
        CliError::Data(format!(
            "unknown relation '{}'; nearest: {}",
            args.relation,
            nearest_labels(
                &args.relation,
                graph.relation_labels().iter().map(String::as_str)
            )
            .join(", ")
        ))
    })?;

    let plane = relation_plane(&cp.params, relation);
    let scores = score_all_tails_with_plane(
        &cp.params,
        &plane,
        head,
        cp.config.activation,
        cp.config.batch_norm,
    );
    let known = graph.known_tails(head, relation);

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    for &t in order.iter().take(args.top_k) {
        let marker = match known {
            Some(tails) if args.mark_filtered && tails.contains(&t) => "\t[known]",
            _ => "",
        };
        println!("{}\t{:.6}{}", graph.entity_label(t), scores[t], marker);
    }
    Ok(())
}

fn cmd_export_vocab(args: ExportVocabArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.data)?;
    let labels = match args.kind.as_str() {
        "entity" => graph.entity_labels(),
        "relation" => graph.relation_labels(),
        other => {
            return Err(CliError::Usage(format!(
                "unknown vocabulary kind '{}' (expected entity or relation)",
                other
            )))
        }
    };
    graph
        .export_vocab(labels, &args.out)
        .map_err(data_err)?;
    println!("wrote {} labels to {}", labels.len(), args.out.display());
    Ok(())
}
