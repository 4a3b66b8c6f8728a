//! Command-line front end.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::classifier::{labeled_examples, train_classifier, StyleModel};
use crate::config::RunConfig;
use crate::corpus::{
    base_sentences, corpus_stats, load_pairs, split, synth_pairs, write_jsonl, PairExample,
    SplitSet, StatsReport, StyleRule, TagSet,
};
use crate::diffusion::LengthPolicy;
use crate::metrics::{evaluate, EvalContext, EvalTriple};
use crate::pipeline::{
    checkpoint_name, generate_all, load_run_scores, read_jsonl, write_json, GeneratedRecord, Run,
    RunScore, SourceRecord, BEST_FILE, LOG_FILE, STYLE_MODEL_FILE, VOCAB_FILE,
};
use crate::tokenizer::Vocab;
use crate::trainer::{select_best, Trainer};

#[derive(Parser, Debug)]
#[command(name = "styleshift", version, about = "Conditional text diffusion for style transfer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Ingest or synthesize pairs, split them, and write corpus statistics.
    Prepare {
        /// JSONL file of {src, trg, style} records.
        #[arg(long, conflicts_with = "synth")]
        input: Option<PathBuf>,
        /// Built-in rewrite rule used to synthesize pairs (d1-analog, d1..d5).
        #[arg(long)]
        synth: Option<String>,
        /// Number of pairs to synthesize.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// train,test,validation proportions.
        #[arg(long)]
        ratios: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Train a denoiser on a prepared data directory.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        eval_every: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        diffusion_steps: Option<usize>,
        /// Existing style model; otherwise one is trained on the train split.
        #[arg(long)]
        style_model: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate target-style text for every source record.
    Generate {
        /// Training output directory (config, vocabulary, checkpoints).
        #[arg(long)]
        run: PathBuf,
        /// Checkpoint file; defaults to the run's best checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// JSONL records with `src` and `style` fields.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        clamp: Option<bool>,
        #[arg(long, value_enum)]
        length: Option<LengthArg>,
        #[command(flatten)]
        common: Common,
    },
    /// Score generations against references, or pick the best row of a score table.
    Evaluate {
        #[arg(long, requires = "references", requires = "run")]
        generated: Option<PathBuf>,
        /// JSONL pairs whose `trg` fields are the references.
        #[arg(long)]
        references: Option<PathBuf>,
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        style_model: Option<PathBuf>,
        /// JSONL score table, one row per run.
        #[arg(long, conflicts_with = "generated")]
        runs: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Train the source/target style classifier.
    ClassifyTrain {
        /// Prepared data directory (train.jsonl, optional test.jsonl) or a JSONL file.
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
pub enum LengthArg {
    MatchSource,
    Full,
}

impl Common {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let cfg = RunConfig::resolve(self.config.as_deref())?;
        let seed = self.seed.unwrap_or(cfg.seed);
        let mut cfg = cfg.with_seed(seed);
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.out_dir.clone().context("an output directory is required (--out DIR)")?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn parse_ratios(s: &str) -> anyhow::Result<[u32; 3]> {
    let parts: Vec<u32> = s
        .split(',')
        .map(|p| p.trim().parse::<u32>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("invalid ratios {s:?}; expected e.g. 90,5,5"))?;
    match parts.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("expected three ratios, got {}", parts.len()),
    }
}

#[derive(Serialize)]
struct PrepareStats {
    all: StatsReport,
    train: StatsReport,
    test: StatsReport,
    validation: StatsReport,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    match cli.command {
        Command::Prepare {
            input,
            synth,
            n,
            ratios,
            common,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(r) = ratios {
                cfg.ratios = parse_ratios(&r)?;
            }
            cmd_prepare(&cfg, input.as_deref(), synth.as_deref(), n, out)
        }
        Command::Train {
            data,
            steps,
            eval_every,
            batch_size,
            learning_rate,
            diffusion_steps,
            style_model,
            common,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(d) = data {
                cfg.data_dir = Some(d);
            }
            let t = &mut cfg.train;
            t.steps = steps.unwrap_or(t.steps);
            t.eval_every = eval_every.unwrap_or(t.eval_every);
            t.batch_size = batch_size.unwrap_or(t.batch_size);
            t.learning_rate = learning_rate.unwrap_or(t.learning_rate);
            t.diffusion_steps = diffusion_steps.unwrap_or(t.diffusion_steps);
            cmd_train(&cfg, style_model.as_deref(), out)
        }
        Command::Generate {
            run,
            checkpoint,
            input,
            clamp,
            length,
            common,
        } => {
            let mut cfg = common.resolve()?;
            if let Some(c) = clamp {
                cfg.sample.clamp = c;
            }
            if let Some(l) = length {
                cfg.sample.length = match l {
                    LengthArg::MatchSource => LengthPolicy::MatchSource,
                    LengthArg::Full => LengthPolicy::Full,
                };
            }
            cmd_generate(&cfg, &run, checkpoint.as_deref(), &input, out)
        }
        Command::Evaluate {
            generated,
            references,
            run,
            checkpoint,
            style_model,
            runs,
            common,
        } => {
            let cfg = common.resolve()?;
            if let Some(table) = runs {
                return cmd_select(&table, out);
            }
            match (generated, references, run) {
                (Some(g), Some(r), Some(run)) => cmd_evaluate(
                    &cfg,
                    &g,
                    &r,
                    &run,
                    checkpoint.as_deref(),
                    style_model.as_deref(),
                    out,
                ),
                _ => bail!("evaluate needs --generated, --references and --run (or --runs TABLE)"),
            }
        }
        Command::ClassifyTrain { data, common } => cmd_classify_train(&common.resolve()?, &data, out),
    }
}

fn cmd_prepare(
    cfg: &RunConfig,
    input: Option<&Path>,
    synth: Option<&str>,
    n: usize,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let pairs: Vec<PairExample> = match (input, synth) {
        (Some(path), None) => load_pairs(path, &TagSet::new(cfg.style_tags.clone()))?,
        (None, Some(name)) => {
            let (rule, tag) =
                StyleRule::builtin(name).with_context(|| format!("unknown synthesis rule {name:?}"))?;
            synth_pairs(&base_sentences(n, cfg.seed), &rule, tag)
        }
        _ => bail!("prepare needs exactly one of --input FILE or --synth RULE"),
    };
    let splits = split(&pairs, cfg.ratios, cfg.seed)?;
    let dir = out_dir(cfg)?;
    write_jsonl(&dir.join("train.jsonl"), &splits.train)?;
    write_jsonl(&dir.join("test.jsonl"), &splits.test)?;
    write_jsonl(&dir.join("validation.jsonl"), &splits.validation)?;
    let stats = PrepareStats {
        all: corpus_stats(&pairs)?,
        train: corpus_stats(&splits.train)?,
        test: corpus_stats(&splits.test)?,
        validation: corpus_stats(&splits.validation)?,
    };
    write_json(&dir.join("stats.json"), &stats)?;
    cfg.save(&dir)?;
    writeln!(out, "{}", stats.all)?;
    writeln!(
        out,
        "wrote {} train / {} test / {} validation pairs to {}",
        splits.train.len(),
        splits.test.len(),
        splits.validation.len(),
        dir.display()
    )?;
    Ok(())
}

/// Reads the three split files of a prepared directory.
pub fn load_splits(dir: &Path, tags: &TagSet, seed: u64) -> anyhow::Result<SplitSet> {
    let read = |name: &str| -> anyhow::Result<Vec<PairExample>> { Ok(load_pairs(&dir.join(name), tags)?) };
    Ok(SplitSet {
        train: read("train.jsonl")?,
        test: read("test.jsonl")?,
        validation: read("validation.jsonl")?,
        seed,
    })
}

/// Vocabulary over the source and target sides of the training pairs.
pub fn build_vocab(pairs: &[PairExample], cfg: &RunConfig) -> crate::Result<Vocab> {
    let texts: Vec<&str> = pairs.iter().flat_map(|p| [p.src.as_str(), p.trg.as_str()]).collect();
    Vocab::build(&texts, cfg.vocab_min_freq, &cfg.style_tags, cfg.lowercase)
}

fn cmd_train(cfg: &RunConfig, style_model: Option<&Path>, out: &mut dyn Write) -> anyhow::Result<()> {
    let data = cfg.data_dir.clone().context("train needs a prepared data directory (--data DIR)")?;
    let splits = load_splits(&data, &TagSet::new(cfg.style_tags.clone()), cfg.seed)?;
    let vocab = build_vocab(&splits.train, cfg)?;
    let mut cfg = cfg.clone();
    cfg.model.vocab_size = vocab.len();
    let style = match style_model {
        Some(p) => StyleModel::load(p)?,
        None => train_classifier(&splits.train, &cfg.classifier)?,
    };
    let dir = out_dir(&cfg)?;
    cfg.save(&dir)?;
    vocab.save(&dir.join(VOCAB_FILE))?;
    style.save(&dir.join(STYLE_MODEL_FILE))?;

    let log_path = dir.join(LOG_FILE);
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    let mut trainer = Trainer::new(vocab, cfg.model.clone(), cfg.train.clone())?;
    writeln!(
        out,
        "training {} parameters on {} pairs for {} steps",
        trainer.params().num_parameters(),
        splits.train.len(),
        cfg.train.steps
    )?;
    let mut entries = Vec::new();
    let checkpoints = trainer.fit(&splits, &style, |entry, ck| {
        ck.save(&dir.join(checkpoint_name(ck.step)))?;
        writeln!(log, "{}", serde_json::to_string(entry)?).map_err(|e| crate::Error::io("writing training log", e))?;
        writeln!(out, "{entry}").map_err(|e| crate::Error::io("writing output", e))?;
        entries.push(entry.clone());
        Ok(())
    })?;
    // Rewrite with semantic scores from the shared final embedding space.
    let mut log = fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
    for (entry, ck) in entries.iter_mut().zip(&checkpoints) {
        entry.val.embed_score = ck.val_metrics.embed_score;
        ck.save(&dir.join(checkpoint_name(ck.step)))?;
        writeln!(log, "{}", serde_json::to_string(entry)?)?;
    }
    let best = select_best(&checkpoints).context("training produced no checkpoints")?;
    fs::write(dir.join(BEST_FILE), format!("{}\n", checkpoint_name(best.step)))?;
    writeln!(
        out,
        "best: {} (semantic {:.4})",
        checkpoint_name(best.step),
        best.val_metrics.embed_score
    )?;
    Ok(())
}

fn cmd_generate(
    cfg: &RunConfig,
    run_dir: &Path,
    checkpoint: Option<&Path>,
    input: &Path,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let run = Run::open(run_dir)?;
    let ck = run.load_checkpoint(checkpoint)?;
    let sources: Vec<SourceRecord> = read_jsonl(input)?;
    if let Some(bad) = sources.iter().find(|s| run.vocab.style_id(&s.style).is_none()) {
        bail!("style tag {:?} is not in the run's vocabulary", bad.style);
    }
    let schedule = run.config.train.schedule()?;
    let records = generate_all(&ck.params, &run.vocab, &schedule, &sources, &cfg.sample)?;
    let dir = out_dir(cfg)?;
    write_jsonl(&dir.join("generated.jsonl"), &records)?;
    cfg.save(&dir)?;
    writeln!(out, "generated {} records into {}", records.len(), dir.display())?;
    Ok(())
}

fn cmd_evaluate(
    cfg: &RunConfig,
    generated: &Path,
    references: &Path,
    run_dir: &Path,
    checkpoint: Option<&Path>,
    style_model: Option<&Path>,
    out: &mut dyn Write,
) -> anyhow::Result<()> {
    let run = Run::open(run_dir)?;
    let ck = run.load_checkpoint(checkpoint)?;
    let style = match style_model {
        Some(p) => StyleModel::load(p)?,
        None => run
            .style_model
            .clone()
            .context("no style model in the run directory; pass --style-model FILE")?,
    };
    let gens: Vec<GeneratedRecord> = read_jsonl(generated)?;
    let refs = load_pairs(references, &TagSet::new(run.config.style_tags.clone()))?;
    if gens.len() != refs.len() {
        bail!(
            "{} generated records but {} references; the files must be aligned",
            gens.len(),
            refs.len()
        );
    }
    let triples: Vec<EvalTriple> = gens
        .into_iter()
        .zip(refs)
        .map(|(g, r)| EvalTriple {
            src: g.src,
            generated: g.generated,
            reference: r.trg,
        })
        .collect();
    let report = evaluate(
        &triples,
        &EvalContext {
            vocab: &run.vocab,
            token_embeddings: &ck.params.token_embeddings,
            style_model: &style,
        },
    )?;
    let dir = out_dir(cfg)?;
    write_json(&dir.join("report.json"), &report)?;
    cfg.save(&dir)?;
    let label = run_dir.file_name().and_then(|s| s.to_str()).unwrap_or("run");
    writeln!(out, "{}", crate::metrics::MetricReport::table_header())?;
    writeln!(out, "{}", report.table_row(label))?;
    Ok(())
}

fn cmd_select(table: &Path, out: &mut dyn Write) -> anyhow::Result<()> {
    let rows: Vec<RunScore> = load_run_scores(table)?;
    writeln!(
        out,
        "{:<8} {:>6} {:>6} {:>6} {:>9} {:>7}",
        "Model", "R-1", "R-2", "R-L", "Semantic", "BLEU"
    )?;
    for r in &rows {
        writeln!(out, "{}", r.table_row())?;
    }
    let best = select_best(&rows).context("score table is empty")?;
    writeln!(out, "best: {}", best.run)?;
    Ok(())
}

fn cmd_classify_train(cfg: &RunConfig, data: &Path, out: &mut dyn Write) -> anyhow::Result<()> {
    let tags = TagSet::new(cfg.style_tags.clone());
    let (train, held_out) = if data.is_dir() {
        let test = data.join("test.jsonl");
        let held = if test.exists() { Some(load_pairs(&test, &tags)?) } else { None };
        (load_pairs(&data.join("train.jsonl"), &tags)?, held)
    } else {
        (load_pairs(data, &tags)?, None)
    };
    let model = train_classifier(&train, &cfg.classifier)?;
    let dir = out_dir(cfg)?;
    model.save(&dir.join(STYLE_MODEL_FILE))?;
    cfg.save(&dir)?;
    writeln!(
        out,
        "{} features; train accuracy {:.4}",
        model.features().len(),
        model.accuracy(&labeled_examples(&train))
    )?;
    if let Some(h) = held_out {
        writeln!(out, "held-out accuracy {:.4}", model.accuracy(&labeled_examples(&h)))?;
    }
    Ok(())
}
