mod config;

use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use transkb::dataset::{parse_word_vectors, validate_unseen_split, Dataset, SplitCounts, Vocabulary, WordVectorTable};
use transkb::evaluate::{EvalOptions, TieMode};
use transkb::trainer::{Checkpoint, Mode, Trainer};
use transkb::transe::EmbeddingSource;
use transkb::Real;

use config::{resolve, RunConfig};

#[derive(Parser)]
#[command(name = "transkb", version, about = "Knowledge-base embeddings with description encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Load a dataset and print its statistics and split report.
    Ingest(IngestArgs),
    /// Train a model, writing checkpoints and a metrics log.
    Train(TrainArgs),
    /// Rank a split with a trained checkpoint.
    Eval(EvalArgs),
    /// Encode a description with a joint-mode checkpoint.
    Embed(EmbedArgs),
    /// Nearest entities to `entity + relation` (or `entity - relation`).
    Query(QueryArgs),
}

#[derive(Args, Default)]
struct DataArgs {
    /// `key = value` run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with train.txt, valid.txt, test.txt and descriptions.txt.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    descriptions: Option<PathBuf>,
    /// `word v1 ... vd` file for the CNN encoder.
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[arg(long)]
    word_dim: Option<usize>,
}

impl DataArgs {
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => RunConfig::load(&resolve(p))?,
            None => RunConfig::default(),
        };
        let d = &mut c.data;
        for (slot, flag) in [
            (&mut d.data_dir, &self.data),
            (&mut d.train, &self.train),
            (&mut d.valid, &self.valid),
            (&mut d.test, &self.test),
            (&mut d.descriptions, &self.descriptions),
            (&mut d.word_vectors, &self.word_vectors),
        ] {
            if flag.is_some() {
                slot.clone_from(flag);
            }
        }
        if self.word_dim.is_some() {
            d.word_dim = self.word_dim;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct IngestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Checkpoint directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Metrics log; defaults to `metrics.log` in the checkpoint directory.
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// Continue from this checkpoint; its configuration is used, except for `--epochs`.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    mode: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    batch: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    distance: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    /// Validation triples sampled per evaluation.
    #[arg(long)]
    sample_size: Option<String>,
    #[arg(long)]
    tsv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[arg(long)]
    sample_size: Option<usize>,
    /// Sampling seed; defaults to the training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Count ties against the true entity.
    #[arg(long)]
    pessimistic: bool,
    /// Also rank the unseen side of unseen-entity triples.
    #[arg(long)]
    both_sides: bool,
    /// Write per-triple ranks here.
    #[arg(long)]
    ranks: Option<PathBuf>,
    #[arg(long)]
    tsv: bool,
}

#[derive(Args)]
struct EmbedArgs {
    checkpoint: PathBuf,
    #[arg(long, conflicts_with = "file", required_unless_present = "file")]
    text: Option<String>,
    #[arg(long)]
    file: Option<PathBuf>,
    #[arg(long)]
    tsv: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Predict {
    Tail,
    Head,
}

#[derive(Args)]
struct QueryArgs {
    checkpoint: PathBuf,
    #[arg(long)]
    relation: String,
    /// Entity name. Training entities use their embedding; others are
    /// encoded from `--text` or their description in the dataset.
    #[arg(long, required_unless_present = "text")]
    entity: Option<String>,
    #[arg(long)]
    text: Option<String>,
    #[arg(short, long, default_value_t = 10)]
    k: usize,
    #[arg(long, value_enum, default_value = "tail")]
    predict: Predict,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    tsv: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::Embed(a) => embed(&a),
        Command::Query(a) => query(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    Ok(Dataset::load(&config.data.dataset_paths()?)?)
}

fn load_word_vectors(config: &RunConfig) -> Result<Option<WordVectorTable>> {
    let Some(path) = &config.data.word_vectors else {
        return Ok(None);
    };
    let path = resolve(path);
    let dim =
        config.data.word_dim.ok_or_else(|| anyhow!("word vectors need their dimension (--word-dim or word_dim)"))?;
    let file = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let load = parse_word_vectors(std::io::BufReader::new(file), &path.display().to_string(), dim)?;
    if load.duplicates > 0 {
        eprintln!("word vectors: ignored {} repeated words", load.duplicates);
    }
    Ok(Some(load.table))
}

fn emit(tsv: bool, rows: &[(&str, String)]) {
    for (k, v) in rows {
        if tsv {
            println!("{k}\t{v}");
        } else {
            println!("{k}: {v}");
        }
    }
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let config = args.data.run_config()?;
    let dataset = load_dataset(&config)?;
    let s = dataset.stats();
    let split = validate_unseen_split(&dataset);
    let counts = |c: SplitCounts| {
        format!("{} both seen, {} one unseen, {} both unseen", c.both_seen, c.one_unseen, c.both_unseen)
    };
    let mut rows = vec![
        ("entities", s.entities.to_string()),
        ("relations", s.relations.to_string()),
        ("description_vocabulary", s.description_vocabulary.to_string()),
        ("max_description_length", s.max_description_length.to_string()),
        ("train", s.train.to_string()),
        ("valid", s.validation.to_string()),
        ("test", s.test.to_string()),
    ];
    if args.tsv {
        rows.extend([
            ("valid_one_unseen", split.validation.one_unseen.to_string()),
            ("valid_both_unseen", split.validation.both_unseen.to_string()),
            ("test_one_unseen", split.test.one_unseen.to_string()),
            ("test_both_unseen", split.test.both_unseen.to_string()),
        ]);
    } else {
        rows.extend([("valid split", counts(split.validation)), ("test split", counts(split.test))]);
    }
    rows.push(("concept_learning_valid", split.concept_learning_valid.to_string()));
    emit(args.tsv, &rows);
    if let Some(table) = load_word_vectors(&config)? {
        emit(args.tsv, &[("word_vectors", table.len().to_string())]);
    }
    Ok(())
}

fn train(args: &TrainArgs) -> Result<()> {
    let mut config = args.data.run_config()?;
    for (key, flag) in [
        ("mode", &args.mode),
        ("gamma", &args.gamma),
        ("learning_rate", &args.lr),
        ("momentum", &args.momentum),
        ("batch_size", &args.batch),
        ("epochs", &args.epochs),
        ("dim", &args.dim),
        ("distance", &args.distance),
        ("seed", &args.seed),
        ("threads", &args.threads),
        ("eval_sample_size", &args.sample_size),
    ] {
        if let Some(v) = flag {
            config.set(key, v).with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
    }
    if let Some(out) = &args.out {
        config.checkpoint_dir = Some(out.clone());
    }
    if let Some(m) = &args.metrics {
        config.metrics_log = Some(m.clone());
    }
    let out = config
        .checkpoint_dir
        .clone()
        .ok_or_else(|| anyhow!("no checkpoint directory: pass --out DIR or set checkpoint_dir"))?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let metrics_path = config.metrics_log.clone().unwrap_or_else(|| out.join("metrics.log"));

    let dataset = load_dataset(&config)?;
    let words = load_word_vectors(&config)?;
    let mut trainer = match &args.resume {
        Some(path) => {
            let mut ck = Checkpoint::load(path)?;
            if let Some(e) = &args.epochs {
                ck.config.epochs = e.parse().context("--epochs")?;
            }
            Trainer::resume(&dataset, ck)?
        }
        None => {
            config.train.validate()?;
            if config.train.mode == Mode::JointCnn && words.is_none() {
                bail!("mode joint_cnn needs word vectors (--word-vectors and --word-dim)");
            }
            Trainer::new(&dataset, &config.train, words.as_ref())?
        }
    };
    let eval_every = trainer.config().eval_every;
    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .with_context(|| format!("opening {}", metrics_path.display()))?;
    while let Some(report) = trainer.next() {
        let report = report?;
        let line = report.metrics_line();
        writeln!(log, "{line}").with_context(|| format!("writing {}", metrics_path.display()))?;
        if args.tsv {
            println!("{}", line.replace(' ', "\t"));
        } else {
            println!("{line}");
        }
        if eval_every > 0 && report.epoch % eval_every == 0 {
            trainer.state().save(&out.join(format!("epoch-{:05}.tkb", report.epoch)))?;
        }
        if report.stopped_early {
            eprintln!("stopped early after epoch {}", report.epoch);
        }
    }
    let final_path = out.join("final.tkb");
    trainer.state().save(&final_path)?;
    eprintln!("wrote {}", final_path.display());
    Ok(())
}

/// The dataset must extend the vocabulary the checkpoint was trained with so
/// that ids agree; new entities may follow.
fn check_vocab(checkpoint: &Vocabulary, dataset: &Vocabulary) -> Result<()> {
    let prefix = |a: &[String], b: &[String]| b.len() >= a.len() && a == &b[..a.len()];
    if !prefix(checkpoint.entities.names(), dataset.entities.names())
        || !prefix(checkpoint.relations.names(), dataset.relations.names())
    {
        bail!("dataset does not match the checkpoint's vocabulary; load the files it was trained on");
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let config = args.data.run_config()?;
    let dataset = load_dataset(&config)?;
    check_vocab(&ck.vocab, &dataset.vocab)?;
    let triples = match args.split {
        Split::Train => &dataset.train,
        Split::Valid => &dataset.validation,
        Split::Test => &dataset.test,
    };
    if triples.is_empty() {
        bail!("the selected split is empty");
    }
    let options = EvalOptions {
        sample_size: args.sample_size,
        seed: args.seed.unwrap_or(ck.config.seed),
        ties: if args.pessimistic { TieMode::Pessimistic } else { TieMode::Optimistic },
        threads: args.threads,
        ..EvalOptions::default()
    };
    let report = ck.evaluate(&dataset, triples, &options, args.both_sides)?;
    if let Some(path) = &args.ranks {
        std::fs::write(path, report.ranks_dump(&dataset.vocab))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    print!("{}", if args.tsv { report.to_tsv() } else { report.to_text() });
    Ok(())
}

fn format_vector(v: &[Real], tsv: bool) -> String {
    let sep = if tsv { "\t" } else { " " };
    v.iter().map(|x| format!("{x:.16e}")).collect::<Vec<_>>().join(sep)
}

fn embed(args: &EmbedArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let encoder =
        ck.encoder.as_ref().ok_or_else(|| anyhow!("embed needs a joint-mode checkpoint; this one is baseline"))?;
    let text = match (&args.text, &args.file) {
        (Some(t), _) => t.clone(),
        (None, Some(p)) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
        (None, None) => unreachable!("clap requires one of --text and --file"),
    };
    println!("{}", format_vector(encoder.encode(text.trim_end_matches('\n'))?.data(), args.tsv));
    Ok(())
}

fn entity_vector(args: &QueryArgs, ck: &Checkpoint) -> Result<Vec<Real>> {
    if let Some(name) = &args.entity {
        if let Some(id) = ck.vocab.entity(name) {
            if args.text.is_none() && ck.training_entities.binary_search(&id).is_ok() {
                return Ok(ck.store.entity(id)?.to_vec());
            }
        }
    }
    let encoder = ck
        .encoder
        .as_ref()
        .ok_or_else(|| anyhow!("only training entities can be queried with a baseline checkpoint"))?;
    let text = match (&args.text, &args.entity) {
        (Some(t), _) => t.clone(),
        (None, Some(name)) => {
            let dataset = load_dataset(&args.data.run_config()?)
                .with_context(|| format!("`{name}` is not a training entity; pass --text or the dataset"))?;
            let id = dataset.vocab.entity(name).ok_or_else(|| transkb::Error::UnknownEntity(name.clone()))?;
            dataset.description(id).ok_or_else(|| transkb::Error::MissingDescription(name.clone()))?.to_owned()
        }
        (None, None) => unreachable!("clap requires --entity or --text"),
    };
    Ok(encoder.encode(&text)?.into_data())
}

fn query(args: &QueryArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let relation = ck.vocab.require_relation(&args.relation)?;
    let e = entity_vector(args, &ck)?;
    let r = ck.store.relation(relation)?;
    let target: Vec<Real> = match args.predict {
        Predict::Tail => e.iter().zip(r).map(|(a, b)| a + b).collect(),
        Predict::Head => e.iter().zip(r).map(|(a, b)| a - b).collect(),
    };
    let k = args.k.min(ck.training_entities.len()).max(1);
    let hits = ck.store.nearest_neighbors(&target, k, &ck.training_entities)?;
    for (i, (id, d)) in hits.iter().enumerate() {
        let name = ck.vocab.entity_name(*id);
        if args.tsv {
            println!("{}\t{name}\t{d:.16e}", i + 1);
        } else {
            println!("{:>4}  {name}  {d:.6}", i + 1);
        }
    }
    Ok(())
}
