mod bundle;
mod tables;

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use lexsel_core::analysis::{per_word_effect, rule_effect_report, trials_from_events, Grouping, SliceN};
use lexsel_core::config::PipelineConfig;
use lexsel_core::corpus::load_corpus;
use lexsel_core::discovery::{accumulate_stream, discover_from_counts, FocusWord, SourceKey};
use lexsel_core::features::{build_dataset, Dataset};
use lexsel_core::models::{shortlist_study_words, Hyperparams, TreeHyper, WordReport};
use lexsel_core::par::Execution;
use lexsel_core::rules::{extract_rules, render_rules, GlossMap};
use lexsel_core::study::{
    fleiss_kappa_from_records, read_events, representative_filter, Event, StudyConfig, DEFAULT_MIN_AGREED,
};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::bundle::{ModelBundle, Split, TrainOptions};

#[derive(Parser)]
#[command(
    name = "lexsel",
    version,
    about = "Mine lexical distinctions from bitext, train selection models and run the cloze study"
)]
struct Cli {
    /// Run every data-parallel loop on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Find focus words in an annotated, aligned corpus.
    Discover {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Sentence pairs held in memory at once.
        #[arg(long, default_value_t = 50_000)]
        batch: usize,
    },
    /// Extract labelled feature sets for focus words.
    Dataset {
        #[arg(long)]
        corpus: PathBuf,
        /// Output of `discover`.
        #[arg(long)]
        focus_words: PathBuf,
        /// `lemma|UPOS`; repeatable. Without it every focus word is built.
        #[arg(long)]
        focus: Vec<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// A file for a single focus word, otherwise a directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Grid-search and train the linear SVM, decision tree and frequency baseline.
    Train(TrainArgs),
    /// Score a trained bundle on its held-out split.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pick study words whose model separates every choice.
    Shortlist {
        /// Directory of `eval` reports.
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_words: usize,
    },
    /// Top positive features per choice as usage rules.
    Rules {
        #[arg(long)]
        model: PathBuf,
        /// `sense_id<TAB>gloss` per line.
        #[arg(long)]
        gloss: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        top: usize,
        #[arg(long)]
        out: PathBuf,
        /// Also print the rendered rules.
        #[arg(long)]
        print: bool,
    },
    /// Keep only examples all native speakers agreed on.
    Filter {
        #[arg(long)]
        study: PathBuf,
        /// Event log holding the annotations.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MIN_AGREED)]
        min_agreed: usize,
        /// Filtered study config.
        #[arg(long)]
        out: PathBuf,
        /// Discard report with Fleiss' kappa.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the study HTTP service.
    Serve {
        /// Study config; optional when the log already holds a study.
        #[arg(long)]
        study: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        log: PathBuf,
    },
    /// Fit the rule-effect mixed models on a study log.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// `default` or a JSON file with a list of SVM hyperparameters.
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Fraction used for training; the rest is held out for `eval`. 1 trains on everything.
    #[arg(long, default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long)]
    no_tree: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Slice sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "5,10,20,30,40,50,all")]
    n: Vec<SliceN>,
    #[arg(long, value_delimiter = ',', default_value = "learner,word,position")]
    groupings: Vec<String>,
    /// Add a per-word fit over the first `--per-word-n` answers.
    #[arg(long)]
    per_word: bool,
    #[arg(long, default_value = "20")]
    per_word_n: SliceN,
    /// Directory of `eval` reports, for model accuracy per word.
    #[arg(long)]
    reports: Option<PathBuf>,
    /// Also write flat CSV tables into this directory.
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    serde_json::from_reader(BufReader::new(file)).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(file), value)?;
    Ok(())
}

fn pipeline_config(path: Option<&Path>) -> Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    })
}

fn read_events_file(path: &Path) -> Result<Vec<Event>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_events(BufReader::new(file))?)
}

fn read_reports(dir: &Path) -> Result<Vec<WordReport>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| read_json(p)).collect()
}

fn file_stem(key: &SourceKey) -> String {
    format!("{}_{}", key.lemma, key.upos).replace(['/', '\\', ' '], "-")
}

fn discover(corpus: &Path, config: Option<&Path>, out: &Path, batch: usize, exec: Execution) -> Result<()> {
    let cfg = pipeline_config(config)?;
    let counts = accumulate_stream(load_corpus(corpus)?, batch, exec)?;
    let words = discover_from_counts(&counts, &cfg.discovery);
    log::info!("{} focus words", words.len());
    write_json(out, &words)
}

fn dataset(
    corpus: &Path,
    focus_words: &Path,
    focus: &[String],
    config: Option<&Path>,
    out: &Path,
    exec: Execution,
) -> Result<()> {
    let cfg = pipeline_config(config)?;
    let all: Vec<FocusWord> = read_json(focus_words)?;
    let wanted: Vec<FocusWord> = if focus.is_empty() {
        all
    } else {
        focus
            .iter()
            .map(|f| {
                let key = SourceKey::parse(f)?;
                all.iter()
                    .find(|w| w.key() == key)
                    .cloned()
                    .with_context(|| format!("{f} is not among the focus words"))
            })
            .collect::<Result<_>>()?
    };
    let keys: BTreeSet<(String, String)> = wanted.iter().map(|w| (w.lemma.clone(), w.upos.clone())).collect();
    // keep only sentences that mention a requested word
    let mut pairs = Vec::new();
    for p in load_corpus(corpus)? {
        let p = p?;
        if p.src.iter().any(|t| keys.contains(&(t.lemma.clone(), t.upos.clone()))) {
            pairs.push(p);
        }
    }
    let sets: Vec<Dataset> =
        lexsel_core::par::map(exec, &wanted, |w| build_dataset(&pairs, w, &cfg.features, &cfg.corpus));
    if focus.len() == 1 {
        log::info!("{}: {} examples", focus[0], sets[0].examples.len());
        return write_json(out, &sets[0]);
    }
    std::fs::create_dir_all(out)?;
    for ds in &sets {
        log::info!("{}: {} examples", ds.focus.key(), ds.examples.len());
        write_json(&out.join(format!("{}.json", file_stem(&ds.focus.key()))), ds)?;
    }
    Ok(())
}

fn train(args: &TrainArgs, exec: Execution) -> Result<()> {
    ensure!(
        args.train_frac > 0.0 && args.train_frac <= 1.0,
        "--train-frac must lie in (0, 1]"
    );
    let ds: Dataset = read_json(&args.dataset)?;
    let svm_grid = match args.grid.as_str() {
        "default" => Hyperparams::default_grid(),
        path => read_json(Path::new(path))?,
    };
    let opts = TrainOptions {
        svm_grid,
        tree_grid: if args.no_tree {
            Vec::new()
        } else {
            TreeHyper::default_grid()
        },
        folds: args.folds,
        seed: args.seed,
        split: (args.train_frac < 1.0).then_some(Split {
            train_frac: args.train_frac,
            seed: args.seed,
        }),
        exec,
    };
    let b = bundle::train(&ds, &opts)?;
    log::info!(
        "{}: C={} class_weight={:?}",
        b.word,
        b.linear_svm.hyper.c,
        b.linear_svm.hyper.class_weight
    );
    write_json(&args.out, &b)
}

fn rules(model: &Path, gloss: Option<&Path>, top: usize, out: &Path, print: bool) -> Result<()> {
    let b: ModelBundle = read_json(model)?;
    let set = extract_rules(&b.linear_svm.model, top);
    if print {
        let glosses = match gloss {
            Some(p) => GlossMap::load(p)?,
            None => GlossMap::default(),
        };
        for (choice, text) in render_rules(&set, &glosses) {
            println!("{choice}\n{text}\n");
        }
    }
    write_json(out, &set)
}

#[derive(Serialize)]
struct FilterReport {
    fleiss_kappa: Option<f64>,
    kept: BTreeMap<String, BTreeMap<String, usize>>,
    discarded_choices: Vec<lexsel_core::study::DiscardedChoice>,
    discarded_words: Vec<lexsel_core::study::DiscardedWord>,
    rejected_examples: usize,
}

fn filter(study: &Path, log: &Path, min_agreed: usize, out: &Path, report: Option<&Path>) -> Result<()> {
    let cfg: StudyConfig = read_json(study)?;
    let annotations: Vec<_> = read_events_file(log)?
        .into_iter()
        .filter_map(|e| match e {
            Event::AnnotationRecorded { record } => Some(record),
            _ => None,
        })
        .collect();
    ensure!(!annotations.is_empty(), "{} holds no annotations", log.display());
    let outcome = representative_filter(&cfg.words, &annotations, min_agreed);
    let kappa = match fleiss_kappa_from_records(&annotations) {
        Ok(k) => Some(k),
        Err(e) => {
            log::warn!("kappa not computed: {e}");
            None
        }
    };
    for d in &outcome.discarded_words {
        log::info!("discarded word {}", d.word);
    }
    write_json(out, &outcome.apply(&cfg))?;
    if let Some(p) = report {
        write_json(
            p,
            &FilterReport {
                fleiss_kappa: kappa,
                kept: outcome
                    .kept
                    .iter()
                    .map(|(w, cs)| (w.clone(), cs.iter().map(|(c, ids)| (c.clone(), ids.len())).collect()))
                    .collect(),
                discarded_choices: outcome.discarded_choices.clone(),
                discarded_words: outcome.discarded_words.clone(),
                rejected_examples: outcome.rejected_examples.len(),
            },
        )?;
    }
    Ok(())
}

fn serve(study: Option<&Path>, host: &str, port: u16, log: &Path) -> Result<()> {
    let config: Option<StudyConfig> = study.map(read_json).transpose()?;
    let state = lexsel_server::AppState::open(config, Some(log))?;
    let addr: SocketAddr = format!("{host}:{port}").parse().context("bad --host/--port")?;
    tokio::runtime::Runtime::new()?.block_on(lexsel_server::serve(addr, state))?;
    Ok(())
}

fn parse_grouping(s: &str) -> Result<Grouping> {
    Ok(match s.trim() {
        "learner" => Grouping::Learner,
        "word" => Grouping::Word,
        "position" | "order" => Grouping::Position,
        other => bail!("unknown grouping {other:?}; use learner, word or position"),
    })
}

#[derive(Serialize)]
struct AnalysisOutput {
    rule_effect: lexsel_core::analysis::RuleEffectReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    per_word: Option<Vec<lexsel_core::analysis::WordEffect>>,
}

fn analyze(args: &AnalyzeArgs, exec: Execution) -> Result<()> {
    let trials = trials_from_events(&read_events_file(&args.log)?);
    ensure!(!trials.is_empty(), "{} holds no answers", args.log.display());
    let groupings = args
        .groupings
        .iter()
        .map(|g| parse_grouping(g))
        .collect::<Result<Vec<_>>>()?;
    let report = rule_effect_report(&trials, &args.n, &groupings, exec)?;
    let per_word = if args.per_word {
        let model_accuracy: BTreeMap<String, f64> = match &args.reports {
            Some(dir) => read_reports(dir)?
                .into_iter()
                .map(|r| (r.word, r.linear_svm.accuracy))
                .collect(),
            None => BTreeMap::new(),
        };
        Some(per_word_effect(&trials, args.per_word_n, &model_accuracy, exec))
    } else {
        None
    };
    for r in &report.rows {
        log::info!(
            "n={} {:?}: beta={:.3} p={:.3}{}",
            r.n,
            r.response,
            r.beta,
            r.p_value,
            r.stars
        );
    }
    if let Some(dir) = &args.csv {
        tables::write_csv(dir, &report, per_word.as_deref())?;
    }
    write_json(
        &args.out,
        &AnalysisOutput {
            rule_effect: report,
            per_word,
        },
    )
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    match cli.command {
        Command::Discover {
            corpus,
            config,
            out,
            batch,
        } => discover(&corpus, config.as_deref(), &out, batch, exec),
        Command::Dataset {
            corpus,
            focus_words,
            focus,
            config,
            out,
        } => dataset(&corpus, &focus_words, &focus, config.as_deref(), &out, exec),
        Command::Train(args) => train(&args, exec),
        Command::Eval { model, dataset, out } => {
            let b: ModelBundle = read_json(&model)?;
            let report = bundle::eval(&b, &read_json(&dataset)?)?;
            log::info!("{}: svm accuracy {:.4}", report.word, report.linear_svm.accuracy);
            write_json(&out, &report)
        }
        Command::Shortlist {
            reports,
            out,
            max_words,
        } => {
            let picked = shortlist_study_words(&read_reports(&reports)?, max_words);
            log::info!("{} words shortlisted", picked.len());
            write_json(&out, &picked)
        }
        Command::Rules {
            model,
            gloss,
            top,
            out,
            print,
        } => rules(&model, gloss.as_deref(), top, &out, print),
        Command::Filter {
            study,
            log,
            min_agreed,
            out,
            report,
        } => filter(&study, &log, min_agreed, &out, report.as_deref()),
        Command::Serve { study, port, host, log } => serve(study.as_deref(), &host, port, &log),
        Command::Analyze(args) => analyze(&args, exec),
    }
}
