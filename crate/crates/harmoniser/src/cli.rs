use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use harmoniser_core::corpus::{parse_corpus_with, TopicOntology};
use harmoniser_core::embedding::{load_store, EmbeddingStore};
use harmoniser_core::evaluation::{
    label_distribution, render_label_table, render_metrics_table, sample_for_review,
    topic_match_metrics_with, Annotation, Averaging, MetricsReport,
};
use harmoniser_core::hybrid::{FusionWeights, HybridScorer};
use harmoniser_core::lexical::{read_index, write_index, Bm25Scorer, InvertedIndex};
use harmoniser_core::pipeline::{
    end_to_end_rank, manifest_pairs, rerank, write_manifest, Bm25Model, DenseModel,
    ExternalScores, HybridModel, PairScorer, RankingRun,
};
use harmoniser_core::Corpus;

use crate::annotations::AnnotationStore;
use crate::config::Config;
use crate::service::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "harmoniser", version, about = "Find equivalent questions across survey questionnaires")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a corpus file and print a summary.
    Ingest(IngestArgs),
    /// Build and cache the BM25 index of the code-list questions.
    Index(IndexArgs),
    /// Rank every code-list question against the others.
    Rank(RankArgs),
    /// Re-score an existing end-to-end run.
    Rerank(RerankArgs),
    /// Print the top-1 topic-match table for one or more runs.
    Eval(EvalArgs),
    /// Draw a seeded sample of top-1 pairs for review.
    Sample(SampleArgs),
    /// Serve the review API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Bm25,
    Dense,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RerankModelArg {
    Bm25,
    Dense,
    Hybrid,
    External,
}

impl From<ModelArg> for RerankModelArg {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Bm25 => Self::Bm25,
            ModelArg::Dense => Self::Dense,
            ModelArg::Hybrid => Self::Hybrid,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    E2e,
    Rerank,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON topic hierarchy to validate topic codes against.
    #[arg(long)]
    pub ontology: Option<PathBuf>,
    /// Keep only code-list questions.
    #[arg(long)]
    pub code_list_only: bool,
    /// Write the validated corpus here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop English stopwords.
    #[arg(long)]
    pub stopwords: bool,
}

#[derive(Debug, Args)]
pub struct ScoringArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Cached index from `harmoniser index`.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// HEMB embedding file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Fusion weights `dense,lexical,multi`.
    #[arg(long)]
    pub weights: Option<FusionWeights>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Base candidates re-scored per query.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    #[arg(long, value_enum)]
    pub model: ModelArg,
    #[arg(long, value_enum, default_value = "e2e")]
    pub mode: ModeArg,
    /// End-to-end run to re-rank; computed with BM25 when omitted.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct RerankArgs {
    #[arg(long)]
    pub base: PathBuf,
    #[arg(long, value_enum)]
    pub model: Option<RerankModelArg>,
    /// Pair-score file from an external scorer.
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Write the pairs an external scorer must answer, then stop.
    #[arg(long)]
    pub emit_manifest: Option<PathBuf>,
    #[command(flatten)]
    pub scoring: ScoringArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    #[arg(long, default_value = "macro")]
    pub averaging: Averaging,
    /// Directory for one JSON metrics record per run.
    #[arg(long)]
    pub json_out: Option<PathBuf>,
    /// Annotation log; adds the label distribution table.
    #[arg(long)]
    pub annotations: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Directory of run files (`*.jsonl`).
    #[arg(long)]
    pub runs: Option<PathBuf>,
    #[arg(long = "run")]
    pub run_files: Vec<PathBuf>,
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub bind: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    /// Bearer token required on every request.
    #[arg(long)]
    pub token: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Ingest(a) => ingest(&a, &mut out),
        Command::Index(a) => index(&config, &a, &mut out),
        Command::Rank(a) => rank(&config, &a, &mut out),
        Command::Rerank(a) => rerank_cmd(&config, &a, &mut out),
        Command::Eval(a) => eval(&a, &mut out),
        Command::Sample(a) => sample(&config, &a, &mut out),
        Command::Serve(a) => serve(&config, a),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

pub fn read_corpus(path: &Path, ontology: Option<&TopicOntology>) -> Result<Corpus> {
    parse_corpus_with(open(path)?, ontology).with_context(|| format!("reading corpus {}", path.display()))
}

pub fn read_run(path: &Path) -> Result<RankingRun> {
    RankingRun::read(open(path)?).with_context(|| format!("reading run {}", path.display()))
}

fn read_store(path: &Path) -> Result<EmbeddingStore> {
    load_store(open(path)?).with_context(|| format!("reading embeddings {}", path.display()))
}

fn write_run(run: &RankingRun, path: Option<&Path>, out: &mut impl Write) -> Result<()> {
    let path = path.context("--out is required")?;
    let mut w = create(path)?;
    run.write(&mut w)?;
    w.flush()?;
    writeln!(out, "{}", run.run_id)?;
    eprintln!("wrote {} queries to {}", run.query_count(), path.display());
    Ok(())
}

fn ingest(args: &IngestArgs, out: &mut impl Write) -> Result<()> {
    let ontology: Option<TopicOntology> = match &args.ontology {
        Some(p) => Some(serde_json::from_reader(open(p)?).with_context(|| format!("reading ontology {}", p.display()))?),
        None => None,
    };
    let mut corpus = read_corpus(&args.corpus, ontology.as_ref())?;
    let total = corpus.len();
    let code_list = corpus.iter().filter(|q| q.is_code_list).count();
    if args.code_list_only {
        corpus = corpus.filter_code_list();
    }
    let topics: std::collections::BTreeSet<&str> = corpus.iter().map(|q| q.topic.top_level.as_str()).collect();
    writeln!(
        out,
        "questions: {total}\ncode-list: {code_list}\nquestionnaires: {}\ntop-level topics: {}",
        corpus.questionnaire_count(),
        topics.len()
    )?;
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        corpus.write_jsonl(&mut w)?;
        w.flush()?;
        writeln!(out, "wrote {} questions to {}", corpus.len(), path.display())?;
    }
    Ok(())
}

fn index(config: &Config, args: &IndexArgs, out: &mut impl Write) -> Result<()> {
    let code_list = read_corpus(&args.corpus, None)?.filter_code_list();
    let mut analyzer = config.analyzer();
    analyzer.remove_stopwords |= args.stopwords;
    let index = InvertedIndex::build(&code_list, analyzer)?;
    std::fs::write(&args.out, write_index(&index)).with_context(|| format!("writing {}", args.out.display()))?;
    writeln!(
        out,
        "indexed {} documents, {} terms, mean length {:.2}",
        index.doc_count(),
        index.vocabulary_size(),
        index.avg_doc_length()
    )?;
    Ok(())
}

/// Settings shared by `rank` and `rerank`, with flags taking precedence over
/// the configuration file.
struct Resolved {
    k: usize,
    depth: usize,
    workers: usize,
    weights: FusionWeights,
}

fn resolve(config: &Config, s: &ScoringArgs) -> Result<Resolved> {
    Ok(Resolved {
        k: s.k.unwrap_or(config.pipeline.k),
        depth: s.depth.unwrap_or(config.pipeline.depth),
        workers: s.workers.unwrap_or(config.pipeline.workers).max(1),
        weights: match s.weights {
            Some(w) => w,
            None => config.fusion_weights()?,
        },
    })
}

/// Loads the cached index or builds one, checking that a cache covers
/// exactly the code-list questions of `code_list`.
fn load_index(config: &Config, path: Option<&Path>, code_list: &Corpus) -> Result<InvertedIndex> {
    let Some(path) = path else {
        return Ok(InvertedIndex::build(code_list, config.analyzer())?);
    };
    let bytes = std::fs::read(path).with_context(|| format!("reading index {}", path.display()))?;
    let index = read_index(&bytes).with_context(|| format!("reading index {}", path.display()))?;
    let mut cached = index.doc_ids().to_vec();
    cached.sort();
    ensure!(
        cached == code_list.sorted_ids(),
        "index {} was built from a different corpus",
        path.display()
    );
    Ok(index)
}

fn require_store(store: Option<&EmbeddingStore>) -> Result<&EmbeddingStore> {
    store.context("--embeddings is required for this model")
}

fn rank(config: &Config, args: &RankArgs, out: &mut impl Write) -> Result<()> {
    let s = &args.scoring;
    let r = resolve(config, s)?;
    let corpus_path = s.corpus.as_deref().context("--corpus is required")?;
    let code_list = read_corpus(corpus_path, None)?.filter_code_list();
    let store = s.embeddings.as_deref().map(read_store).transpose()?;
    let index = load_index(config, s.index.as_deref(), &code_list)?;
    let bm25 = Bm25Scorer::new(&index, config.bm25_params()?)?;

    let run = match args.mode {
        ModeArg::E2e => {
            ensure!(args.base.is_none(), "--base only applies to --mode rerank");
            match args.model {
                ModelArg::Bm25 => end_to_end_rank(&Bm25Model::new(&code_list, bm25.clone()), &code_list, r.k, r.workers)?,
                ModelArg::Dense => {
                    end_to_end_rank(&DenseModel::new(require_store(store.as_ref())?), &code_list, r.k, r.workers)?
                }
                ModelArg::Hybrid => {
                    let scorer = HybridScorer::new(&code_list, Some(&bm25), store.as_ref(), r.weights)?;
                    let model = HybridModel::new(scorer, Some(&bm25), store.as_ref());
                    end_to_end_rank(&model, &code_list, r.k, r.workers)?
                }
            }
        }
        ModeArg::Rerank => {
            let base = match &args.base {
                Some(p) => read_run(p)?,
                None => end_to_end_rank(&Bm25Model::new(&code_list, bm25.clone()), &code_list, r.depth, r.workers)?,
            };
            rerank_with(args.model.into(), &base, &code_list, Some(&bm25), store.as_ref(), None, &r)?
        }
    };
    write_run(&run, s.out.as_deref(), out)
}

fn rerank_with(
    model: RerankModelArg,
    base: &RankingRun,
    code_list: &Corpus,
    bm25: Option<&Bm25Scorer<'_>>,
    store: Option<&EmbeddingStore>,
    external: Option<&ExternalScores>,
    r: &Resolved,
) -> Result<RankingRun> {
    let lexical = || bm25.context("a corpus is required for this model");
    let run = match model {
        RerankModelArg::Bm25 => {
            let model = Bm25Model::new(code_list, lexical()?.clone());
            rerank(base, &model as &dyn PairScorer, r.depth, r.k, r.workers)?
        }
        RerankModelArg::Dense => {
            let model = DenseModel::new(require_store(store)?);
            rerank(base, &model as &dyn PairScorer, r.depth, r.k, r.workers)?
        }
        RerankModelArg::Hybrid => {
            let bm25 = lexical()?;
            let scorer = HybridScorer::new(code_list, Some(bm25), store, r.weights)?;
            let model = HybridModel::new(scorer, Some(bm25), store);
            rerank(base, &model as &dyn PairScorer, r.depth, r.k, r.workers)?
        }
        RerankModelArg::External => {
            let scores = external.context("--scores is required for the external model")?;
            rerank(base, scores, r.depth, r.k, r.workers)?
        }
    };
    Ok(run)
}

fn rerank_cmd(config: &Config, args: &RerankArgs, out: &mut impl Write) -> Result<()> {
    let s = &args.scoring;
    let r = resolve(config, s)?;
    let base = read_run(&args.base)?;
    let pairs = manifest_pairs(&base, r.depth);

    if let Some(path) = &args.emit_manifest {
        let mut w = create(path)?;
        write_manifest(&pairs, &mut w)?;
        w.flush()?;
        writeln!(out, "wrote {} pairs to {}", pairs.len(), path.display())?;
        return Ok(());
    }

    let model = match (args.model, &args.scores) {
        (Some(m), None) => m,
        (None | Some(RerankModelArg::External), Some(_)) => RerankModelArg::External,
        (Some(m), Some(_)) => bail!("--scores only applies to the external model, not {m:?}"),
        (None, None) => bail!("give --model or --scores"),
    };
    let external = match &args.scores {
        Some(p) => {
            let source = p.file_stem().map_or("external".into(), |s| s.to_string_lossy().into_owned());
            Some(ExternalScores::read(source, open(p)?, Some(&pairs)).with_context(|| format!("reading scores {}", p.display()))?)
        }
        None => None,
    };

    let lexical = matches!(model, RerankModelArg::Bm25 | RerankModelArg::Hybrid);
    let code_list = match s.corpus.as_deref() {
        Some(p) => read_corpus(p, None)?.filter_code_list(),
        None if !lexical => Corpus::default(),
        None => bail!("--corpus is required for the {model:?} model"),
    };
    let store = s.embeddings.as_deref().map(read_store).transpose()?;
    let index = if lexical {
        Some(load_index(config, s.index.as_deref(), &code_list)?)
    } else {
        None
    };
    let params = config.bm25_params()?;
    let bm25 = index.as_ref().map(|i| Bm25Scorer::new(i, params)).transpose()?;
    let run = rerank_with(model, &base, &code_list, bm25.as_ref(), store.as_ref(), external.as_ref(), &r)?;
    write_run(&run, s.out.as_deref(), out)
}

fn read_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let mut all = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        all.push(serde_json::from_str(&line).with_context(|| format!("{}, line {}", path.display(), i + 1))?);
    }
    Ok(all)
}

fn eval(args: &EvalArgs, out: &mut impl Write) -> Result<()> {
    let corpus = read_corpus(&args.corpus, None)?;
    let runs = args.runs.iter().map(|p| read_run(p)).collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::new();
    for run in &runs {
        let metrics = topic_match_metrics_with(run, &corpus, args.averaging)
            .with_context(|| format!("evaluating {}", run.run_id))?;
        reports.push(MetricsReport::new(run, metrics));
    }
    write!(out, "{}", render_metrics_table(&reports))?;
    if let Some(dir) = &args.json_out {
        std::fs::create_dir_all(dir)?;
        for report in &reports {
            std::fs::write(dir.join(format!("{}.json", report.run_id)), report.to_json())?;
        }
    }
    if let Some(path) = &args.annotations {
        let mut by_run: BTreeMap<String, Vec<Annotation>> = BTreeMap::new();
        for a in read_annotations(path)? {
            by_run.entry(a.run_id.clone()).or_default().push(a);
        }
        let rows = by_run
            .into_iter()
            .map(|(run_id, list)| Ok((run_id, label_distribution(&list)?)))
            .collect::<Result<Vec<_>>>()?;
        if !rows.is_empty() {
            writeln!(out)?;
            write!(out, "{}", render_label_table(&rows))?;
        }
    }
    Ok(())
}

fn sample(config: &Config, args: &SampleArgs, out: &mut impl Write) -> Result<()> {
    let run = read_run(&args.run)?;
    let n = args.n.unwrap_or(config.review.n);
    let seed = args.seed.unwrap_or(config.review.seed);
    for (q, c) in sample_for_review(&run, n, seed)? {
        writeln!(out, "{}", serde_json::json!({"query_id": q, "candidate_id": c}))?;
    }
    Ok(())
}

/// Run files named on the command line plus every `*.jsonl` in `dir`.
fn collect_runs(dir: Option<&Path>, files: &[PathBuf]) -> Result<Vec<RankingRun>> {
    let mut paths = files.to_vec();
    if let Some(dir) = dir {
        let mut found = Vec::new();
        for entry in std::fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "jsonl") {
                found.push(path);
            }
        }
        found.sort();
        paths.extend(found);
    }
    paths.iter().map(|p| read_run(p)).collect()
}

pub fn build_state(config: &Config, args: &ServeArgs) -> Result<AppState> {
    let corpus = read_corpus(&args.corpus, None)?;
    let runs = collect_runs(args.runs.as_deref(), &args.run_files)?;
    let store = AnnotationStore::open(&args.annotations)?;
    let token = args.token.clone().or_else(|| config.service.token.clone());
    let mut state = AppState::new(corpus, runs, store, token)?;
    state.review_n = config.review.n;
    state.review_seed = config.review.seed;
    Ok(state)
}

fn serve(config: &Config, args: ServeArgs) -> Result<()> {
    let state = Arc::new(build_state(config, &args)?);
    let bind = args.bind.clone().unwrap_or_else(|| config.service.bind.clone());
    let port = args.port.unwrap_or(config.service.port);
    let addr: SocketAddr = format!("{bind}:{port}").parse().with_context(|| format!("bad address {bind}:{port}"))?;
    eprintln!(
        "{} questions, {} runs, {} annotations",
        state.corpus.len(),
        state.runs.len(),
        state.store.len()
    );
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
