mod config;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use kgreason::dataset::{build_datasets, dataset_stats, DatasetConfig};
use kgreason::eval::{
    ablate, answer_from_paths, profile_retrieval, render_ablation, retrieve_for_plans, score_with, PipelineOptions,
    ScoreOptions,
};
use kgreason::jsonl::{read_jsonl_file, write_jsonl};
use kgreason::kg::{load_graph_file, resolve_known, LoadOptions};
use kgreason::llm::{ChatModel, ClientConfig, HttpChatClient};
use kgreason::paths::{ReasoningPath, RetrievedPaths, DEFAULT_MAX_LEN, DEFAULT_MAX_PATHS};
use kgreason::planning::{
    gold_plans, FilePlanner, LlmPlanner, OraclePlanner, PlanSet, Planner, QaInstance, RandomPlanner,
};
use kgreason::reasoning::{AnswerMode, AnswerSet, Prediction, PromptMode, DEFAULT_TOP_N};
use kgreason::synth::{self, BenchmarkConfig};
use kgreason::{Error, KnowledgeGraph};

use config::{pick, FileConfig, LlmArgs, Provenance};

const EXIT_USAGE: u8 = 1;
const EXIT_DATA: u8 = 2;
const EXIT_TRANSPORT: u8 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "kgreason",
    version,
    about = "Plan, retrieve and reason over knowledge graphs"
)]
struct Cli {
    /// Worker threads for per-question parallelism (default: all cores, 4 for LLM stages).
    #[arg(long, global = true)]
    parallelism: Option<usize>,
    /// TOML config file with [llm] and [pipeline] sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inspect or cut knowledge graphs.
    #[command(subcommand)]
    Kg(KgCommand),
    /// Gold relation-path extraction.
    #[command(subcommand)]
    Plans(PlansCommand),
    /// Instruction-tuning dataset construction.
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Write seeded synthetic graphs and question sets.
    Generate(GenerateArgs),
    /// Produce top-K relation-path plans per question.
    Plan(PlanArgs),
    /// Retrieve reasoning paths for planned relation paths.
    Retrieve(RetrieveArgs),
    /// Answer questions from retrieved reasoning paths.
    Answer(AnswerArgs),
    /// Score predictions against gold answers.
    Eval(EvalArgs),
    /// Run the full pipeline and its ablations.
    Ablate(AblateArgs),
    /// Retrieval cost and answer coverage as K grows.
    Profile(ProfileArgs),
}

#[derive(Subcommand, Debug)]
enum KgCommand {
    /// Entity, relation and triple counts.
    Stats {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        inverse_relations: bool,
        #[arg(long)]
        json: bool,
    },
    /// Triples within N forward hops of the seed entities.
    Subgraph {
        #[arg(long)]
        graph: PathBuf,
        /// Take seeds from the question entities of a QA file.
        #[arg(long)]
        qa: Option<PathBuf>,
        /// Seed entity label (repeatable).
        #[arg(long = "seed-entity")]
        seed_entities: Vec<String>,
        #[arg(long)]
        max_hops: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum PlansCommand {
    /// Shortest relation paths from question entities to answers, as plan JSONL.
    Extract {
        #[command(flatten)]
        io: GraphQa,
        #[arg(long)]
        max_len: Option<usize>,
        /// Keep at most this many plans per question.
        #[arg(long)]
        plan_cap: Option<usize>,
        #[arg(long)]
        max_paths: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Planning and reasoning instruction JSONL plus statistics.
    Build {
        #[command(flatten)]
        io: GraphQa,
        #[arg(long)]
        max_len: Option<usize>,
        #[arg(long, default_value_t = 10)]
        plan_cap: usize,
        #[arg(long)]
        max_paths: Option<usize>,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(clap::Args, Debug)]
struct GraphQa {
    /// Triple file (TSV, optionally gzip-compressed).
    #[arg(long)]
    graph: PathBuf,
    /// Questions as JSONL.
    #[arg(long)]
    qa: PathBuf,
    /// Add inverse relations with a "~" prefix at load time.
    #[arg(long)]
    inverse_relations: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum SynthKind {
    Family,
    Bench,
    Scale,
}

#[derive(clap::Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    kind: SynthKind,
    #[arg(long)]
    seed: u64,
    /// Override the number of questions.
    #[arg(long)]
    questions: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Backend {
    Oracle,
    File,
    Llm,
    Random,
}

#[derive(clap::Args, Debug)]
struct PlannerArgs {
    #[arg(long, value_enum, default_value = "oracle")]
    backend: Backend,
    /// Plans per question.
    #[arg(long)]
    top_k: Option<usize>,
    /// Plan JSONL for the file backend.
    #[arg(long)]
    plans_file: Option<PathBuf>,
    /// Seed for the random backend.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_len: Option<usize>,
    #[command(flatten)]
    llm: LlmArgs,
}

#[derive(clap::Args, Debug)]
struct PlanArgs {
    #[command(flatten)]
    io: GraphQa,
    #[command(flatten)]
    planner: PlannerArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct RetrieveArgs {
    #[command(flatten)]
    io: GraphQa,
    #[arg(long)]
    plans: PathBuf,
    #[arg(long)]
    max_paths: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum ModeArg {
    Llm,
    Vote,
    Raw,
}

impl From<ModeArg> for AnswerMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Llm => AnswerMode::Llm,
            ModeArg::Vote => AnswerMode::Vote,
            ModeArg::Raw => AnswerMode::Raw,
        }
    }
}

#[derive(clap::Args, Debug)]
struct AnswerArgs {
    #[command(flatten)]
    io: GraphQa,
    /// Reasoning-path JSONL from `retrieve`.
    #[arg(long)]
    paths: PathBuf,
    #[arg(long, value_enum)]
    mode: ModeArg,
    /// Answers kept in vote mode.
    #[arg(long)]
    top_n: Option<usize>,
    /// Use the explanation prompt with few-shot examples from this file.
    #[arg(long)]
    explain_examples: Option<PathBuf>,
    #[command(flatten)]
    llm: LlmArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    qa: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    json_out: Option<PathBuf>,
    /// Row label in the text report.
    #[arg(long, default_value = "predictions")]
    name: String,
    /// Match answers case-sensitively.
    #[arg(long)]
    no_case_fold: bool,
}

#[derive(clap::Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    io: GraphQa,
    #[arg(long, value_enum, default_value = "oracle")]
    backend: Backend,
    #[arg(long)]
    plans_file: Option<PathBuf>,
    /// Seed for the random-plans row.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    max_paths: Option<usize>,
    /// Reason with the chat endpoint (enables the llm and w/o-planning rows).
    #[arg(long)]
    use_llm: bool,
    #[command(flatten)]
    llm: LlmArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(clap::Args, Debug)]
struct ProfileArgs {
    #[command(flatten)]
    io: GraphQa,
    #[command(flatten)]
    planner: PlannerArgs,
    /// Comma-separated ascending K values.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,5")]
    k: Vec<usize>,
    #[arg(long)]
    max_paths: Option<usize>,
    #[arg(long)]
    json_out: Option<PathBuf>,
}

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: if e.is_transport() { EXIT_TRANSPORT } else { EXIT_DATA },
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".partial");
    PathBuf::from(name)
}

/// Writes through `<path>.partial` and renames on success; a failed write
/// leaves the flushed `.partial` file behind.
fn write_output(path: &Path, body: impl FnOnce(&mut dyn Write) -> CliResult) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = partial_path(path);
    let mut w = BufWriter::new(File::create(&tmp)?);
    let result = body(&mut w);
    w.flush()?;
    drop(w);
    result?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn write_provenance(path: &Path, prov: &Provenance<'_>) -> CliResult {
    let mut meta = path.as_os_str().to_owned();
    meta.push(".meta.json");
    let text = serde_json::to_string_pretty(prov)? + "\n";
    std::fs::write(PathBuf::from(meta), text)?;
    Ok(())
}

fn write_jsonl_output<T: serde::Serialize>(path: &Path, records: &[T]) -> CliResult {
    write_output(path, |w| Ok(write_jsonl(w, records)?))
}

fn load_graph(path: &Path, inverse: bool) -> CliResult<KnowledgeGraph> {
    let g = load_graph_file(
        path,
        &LoadOptions {
            inverse_relations: inverse,
        },
    )?;
    log::info!("loaded {}: {:?}", path.display(), g.stats());
    Ok(g)
}

fn load_qa(path: &Path) -> CliResult<Vec<QaInstance>> {
    Ok(read_jsonl_file(path)?)
}

fn llm_settings(cfg: &ClientConfig) -> serde_json::Value {
    // the key itself is never part of the config, only the variable name
    serde_json::to_value(cfg).unwrap_or_default()
}

struct Ctx {
    file: FileConfig,
}

impl Ctx {
    fn top_k(&self, flag: Option<usize>) -> usize {
        pick(flag, self.file.pipeline.top_k, 3)
    }

    fn top_n(&self, flag: Option<usize>) -> usize {
        pick(flag, self.file.pipeline.top_n, DEFAULT_TOP_N)
    }

    fn max_len(&self, flag: Option<usize>) -> usize {
        pick(flag, self.file.pipeline.max_len, DEFAULT_MAX_LEN)
    }

    fn max_paths(&self, flag: Option<usize>) -> usize {
        pick(flag, self.file.pipeline.max_paths, DEFAULT_MAX_PATHS)
    }

    fn client(&self, args: &LlmArgs) -> CliResult<(HttpChatClient, ClientConfig)> {
        let cfg = args.resolve(&self.file.llm);
        let client = HttpChatClient::new(cfg.clone()).map_err(|e| CliError::usage(e.to_string()))?;
        Ok((client, cfg))
    }
}

fn generate(args: &GenerateArgs) -> CliResult {
    std::fs::create_dir_all(&args.out_dir)?;
    let (graph, questions) = match args.kind {
        SynthKind::Family => (synth::family_example(), vec![synth::family_question()]),
        SynthKind::Bench | SynthKind::Scale => {
            let mut cfg = if args.kind == SynthKind::Bench {
                BenchmarkConfig::small(args.seed)
            } else {
                BenchmarkConfig::scale(args.seed)
            };
            if let Some(n) = args.questions {
                cfg.questions = n;
            }
            let b = synth::generate_benchmark(&cfg)?;
            (b.graph, b.questions)
        }
    };
    let graph_path = args.out_dir.join("graph.tsv");
    write_output(&graph_path, |w| Ok(graph.write_tsv(w)?))?;
    write_jsonl_output(&args.out_dir.join("qa.jsonl"), &questions)?;
    eprintln!(
        "wrote {} triples and {} questions to {}",
        graph.num_triples(),
        questions.len(),
        args.out_dir.display()
    );
    Ok(())
}

fn kg(cmd: &KgCommand) -> CliResult {
    match cmd {
        KgCommand::Stats {
            graph,
            inverse_relations,
            json,
        } => {
            let g = load_graph(graph, *inverse_relations)?;
            if *json {
                println!("{}", serde_json::to_string(&g.stats())?);
            } else {
                println!("{}", g.stats());
            }
            Ok(())
        }
        KgCommand::Subgraph {
            graph,
            qa,
            seed_entities,
            max_hops,
            out,
        } => {
            let g = load_graph(graph, false)?;
            let mut labels = seed_entities.clone();
            if let Some(qa) = qa {
                for q in load_qa(qa)? {
                    labels.extend(q.question_entities);
                }
            }
            let seeds = resolve_known(&g, &labels);
            if seeds.is_empty() {
                return Err(CliError::usage("no seed entity found in the graph"));
            }
            let sub = g.extract_subgraph(&seeds, *max_hops)?;
            write_output(out, |w| Ok(sub.write_tsv(w)?))?;
            write_provenance(
                out,
                &Provenance::new("kg subgraph", json!({"max_hops": max_hops, "seeds": seeds.len()})),
            )?;
            eprintln!("{}", sub.stats());
            Ok(())
        }
    }
}

fn plans_extract(ctx: &Ctx, cmd: &PlansCommand) -> CliResult {
    let PlansCommand::Extract {
        io,
        max_len,
        plan_cap,
        max_paths,
        out,
    } = cmd;
    let g = load_graph(&io.graph, io.inverse_relations)?;
    let qa = load_qa(&io.qa)?;
    let max_len = ctx.max_len(*max_len);
    let max_paths = ctx.max_paths(*max_paths);
    let golds: Vec<_> = qa
        .par_iter()
        .map(|q| gold_plans(&g, q, max_len, max_paths))
        .collect::<Result<_, _>>()?;
    let mut unreachable = 0;
    let mut truncated = 0;
    let sets: Vec<PlanSet> = qa
        .iter()
        .zip(golds)
        .map(|(q, gold)| {
            unreachable += usize::from(gold.plans.is_empty());
            truncated += usize::from(gold.truncated);
            let mut plans = gold.plans;
            if let Some(cap) = plan_cap {
                plans.truncate(*cap);
            }
            PlanSet {
                question_id: q.id.clone(),
                plans,
                scores: None,
            }
        })
        .collect();
    write_jsonl_output(out, &sets)?;
    write_provenance(
        out,
        &Provenance::new(
            "plans extract",
            json!({"max_len": max_len, "max_paths": max_paths, "plan_cap": plan_cap, "inverse_relations": io.inverse_relations}),
        ),
    )?;
    eprintln!(
        "questions {}  unreachable {}  truncated {}",
        sets.len(),
        unreachable,
        truncated
    );
    Ok(())
}

fn dataset_build(ctx: &Ctx, cmd: &DatasetCommand) -> CliResult {
    let DatasetCommand::Build {
        io,
        max_len,
        plan_cap,
        max_paths,
        out_dir,
    } = cmd;
    let g = load_graph(&io.graph, io.inverse_relations)?;
    let qa = load_qa(&io.qa)?;
    let cfg = DatasetConfig {
        max_len: ctx.max_len(*max_len),
        plan_cap: *plan_cap,
        max_paths: ctx.max_paths(*max_paths),
    };
    let (planning, reasoning) = build_datasets(&qa, &g, &cfg)?;
    let stats = dataset_stats(&planning, &reasoning);
    std::fs::create_dir_all(out_dir)?;
    write_jsonl_output(&out_dir.join("planning.jsonl"), &planning.records)?;
    write_jsonl_output(&out_dir.join("reasoning.jsonl"), &reasoning.records)?;
    let settings = json!({"max_len": cfg.max_len, "plan_cap": cfg.plan_cap, "max_paths": cfg.max_paths});
    let header = format!("# kgreason dataset build {settings}\n");
    std::fs::write(out_dir.join("stats.txt"), header + &stats.to_text())?;
    std::fs::write(out_dir.join("stats.json"), serde_json::to_string_pretty(&stats)? + "\n")?;
    write_provenance(
        &out_dir.join("planning.jsonl"),
        &Provenance::new("dataset build", settings.clone()),
    )?;
    write_provenance(
        &out_dir.join("reasoning.jsonl"),
        &Provenance::new("dataset build", settings),
    )?;
    print!("{}", stats.to_text());
    Ok(())
}

/// Planner plus the client it borrows, kept alive together.
struct PlannerBox<'g> {
    planner: Box<dyn Planner + 'g>,
    settings: serde_json::Value,
}

fn make_planner<'g>(
    ctx: &Ctx,
    g: &'g KnowledgeGraph,
    args: &PlannerArgs,
    client: Option<&'g HttpChatClient>,
) -> CliResult<PlannerBox<'g>> {
    let max_len = ctx.max_len(args.max_len);
    Ok(match args.backend {
        Backend::Oracle => PlannerBox {
            planner: Box::new(OraclePlanner::new(g, max_len)),
            settings: json!({"backend": "oracle", "max_len": max_len}),
        },
        Backend::File => {
            let path = args
                .plans_file
                .as_ref()
                .ok_or_else(|| CliError::usage("--backend file needs --plans-file"))?;
            PlannerBox {
                planner: Box::new(FilePlanner::load(path)?),
                settings: json!({"backend": "file", "plans_file": path}),
            }
        }
        Backend::Random => {
            let seed = args
                .seed
                .ok_or_else(|| CliError::usage("--backend random needs an explicit --seed"))?;
            PlannerBox {
                planner: Box::new(RandomPlanner {
                    graph: g,
                    max_len,
                    seed,
                }),
                settings: json!({"backend": "random", "seed": seed, "max_len": max_len}),
            }
        }
        Backend::Llm => {
            let client = client.ok_or_else(|| CliError::usage("--backend llm needs endpoint settings"))?;
            PlannerBox {
                planner: Box::new(LlmPlanner { client }),
                settings: json!({"backend": "llm", "llm": llm_settings(client.config())}),
            }
        }
    })
}

fn plan(ctx: &Ctx, args: &PlanArgs) -> CliResult {
    let g = load_graph(&args.io.graph, args.io.inverse_relations)?;
    let qa = load_qa(&args.io.qa)?;
    let client = if args.planner.backend == Backend::Llm {
        Some(ctx.client(&args.planner.llm)?.0)
    } else {
        None
    };
    let pb = make_planner(ctx, &g, &args.planner, client.as_ref())?;
    let k = ctx.top_k(args.planner.top_k);
    let sets: Vec<PlanSet> = qa.par_iter().map(|q| pb.planner.plan(q, k)).collect::<Result<_, _>>()?;
    let ungrounded = sets
        .iter()
        .flat_map(|s| &s.plans)
        .filter(|p| kgreason::paths::ground_plan(p, &g).is_err())
        .count();
    write_jsonl_output(&args.out, &sets)?;
    let mut settings = pb.settings;
    settings["top_k"] = json!(k);
    write_provenance(&args.out, &Provenance::new("plan", settings))?;
    eprintln!(
        "questions {}  plans {}  ungrounded {}",
        sets.len(),
        sets.iter().map(PlanSet::len).sum::<usize>(),
        ungrounded
    );
    Ok(())
}

fn retrieve(ctx: &Ctx, args: &RetrieveArgs) -> CliResult {
    let g = load_graph(&args.io.graph, args.io.inverse_relations)?;
    let qa = load_qa(&args.io.qa)?;
    let planner = FilePlanner::load(&args.plans)?;
    let max_paths = ctx.max_paths(args.max_paths);
    let results: Vec<(RetrievedPaths, usize)> = qa
        .par_iter()
        .map(|q| {
            let plans = planner.plan(q, usize::MAX)?;
            let got = retrieve_for_plans(&g, q, &plans, max_paths)?;
            Ok((
                RetrievedPaths {
                    question_id: q.id.clone(),
                    paths: got.paths.iter().map(|p| p.to_labels(&g)).collect(),
                    truncated: got.truncated,
                },
                got.ungrounded,
            ))
        })
        .collect::<Result<_, Error>>()?;
    let ungrounded: usize = results.iter().map(|r| r.1).sum();
    let records: Vec<RetrievedPaths> = results.into_iter().map(|r| r.0).collect();
    write_jsonl_output(&args.out, &records)?;
    write_provenance(&args.out, &Provenance::new("retrieve", json!({"max_paths": max_paths})))?;
    eprintln!(
        "questions {}  paths {}  ungrounded plans {}  truncated {}",
        records.len(),
        records.iter().map(|r| r.paths.len()).sum::<usize>(),
        ungrounded,
        records.iter().filter(|r| r.truncated).count()
    );
    Ok(())
}

fn answer(ctx: &Ctx, args: &AnswerArgs) -> CliResult {
    let g = load_graph(&args.io.graph, args.io.inverse_relations)?;
    let qa = load_qa(&args.io.qa)?;
    let stored: Vec<RetrievedPaths> = read_jsonl_file(&args.paths)?;
    let by_id: HashMap<&str, &RetrievedPaths> = stored.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let mode = AnswerMode::from(args.mode);
    let client = if mode == AnswerMode::Llm {
        Some(ctx.client(&args.llm)?)
    } else {
        None
    };
    let prompt_mode = match &args.explain_examples {
        Some(p) => PromptMode::Explain {
            examples: std::fs::read_to_string(p)?.trim_end().to_owned(),
        },
        None => PromptMode::Answer,
    };
    let opts = PipelineOptions {
        mode,
        top_n: ctx.top_n(args.top_n),
        client: client.as_ref().map(|(c, _)| c as &dyn ChatModel),
        prompt_mode,
        ..Default::default()
    };
    let outcomes: Vec<(Prediction, bool)> = qa
        .par_iter()
        .map(|q| {
            let paths: Vec<ReasoningPath> = match by_id.get(q.id.as_str()) {
                Some(r) => r
                    .paths
                    .iter()
                    .map(|p| ReasoningPath::from_labels(&g, p))
                    .collect::<Result<_, _>>()?,
                None => Vec::new(),
            };
            match answer_from_paths(&g, q, &paths, &opts) {
                Ok(set) => Ok((Prediction::from_answers(&q.id, &set), false)),
                Err(e) if e.is_transport() => {
                    log::warn!("{}: {e}", q.id);
                    Ok((Prediction::from_answers(&q.id, &AnswerSet::empty(mode)), true))
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_, Error>>()?;
    let failures = outcomes.iter().filter(|o| o.1).count();
    let predictions: Vec<Prediction> = outcomes.into_iter().map(|o| o.0).collect();
    write_jsonl_output(&args.out, &predictions)?;
    let mut settings = json!({"mode": mode.to_string(), "top_n": opts.top_n});
    if let Some((_, cfg)) = &client {
        settings["llm"] = llm_settings(cfg);
    }
    write_provenance(&args.out, &Provenance::new("answer", settings))?;
    eprintln!("questions {}  failures {}", predictions.len(), failures);
    Ok(())
}

fn eval(args: &EvalArgs) -> CliResult {
    let qa = load_qa(&args.qa)?;
    let predictions: Vec<Prediction> = read_jsonl_file(&args.predictions)?;
    let report = score_with(
        &predictions,
        &qa,
        ScoreOptions {
            case_fold: !args.no_case_fold,
        },
    )?;
    print!("{}", report.to_text(&args.name));
    if let Some(path) = &args.json_out {
        write_output(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    Ok(())
}

fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect::<String>()
        .split('-')
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join("-")
}

fn ablate_cmd(ctx: &Ctx, args: &AblateArgs) -> CliResult {
    let g = load_graph(&args.io.graph, args.io.inverse_relations)?;
    let qa = load_qa(&args.io.qa)?;
    let client = if args.use_llm || args.backend == Backend::Llm {
        Some(ctx.client(&args.llm)?.0)
    } else {
        None
    };
    let planner_args = PlannerArgs {
        backend: args.backend,
        top_k: args.top_k,
        plans_file: args.plans_file.clone(),
        seed: Some(args.seed),
        max_len: args.max_len,
        llm: args.llm.clone(),
    };
    let pb = make_planner(ctx, &g, &planner_args, client.as_ref())?;
    let max_len = ctx.max_len(args.max_len);
    let random = RandomPlanner {
        graph: &g,
        max_len,
        seed: args.seed,
    };
    let base = PipelineOptions {
        k: ctx.top_k(args.top_k),
        top_n: ctx.top_n(args.top_n),
        max_paths: ctx.max_paths(args.max_paths),
        client: if args.use_llm {
            client.as_ref().map(|c| c as &dyn ChatModel)
        } else {
            None
        },
        ..Default::default()
    };
    let rows = ablate(&g, &qa, pb.planner.as_ref(), &random, &base)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let mut summary = Vec::new();
    for row in &rows {
        let file = args.out_dir.join(format!("predictions-{}.jsonl", slug(&row.name)));
        write_jsonl_output(&file, &row.output.predictions)?;
        summary.push(json!({"name": row.name, "report": row.output.report, "stats": row.output.stats}));
    }
    let table = render_ablation(&rows);
    let settings = json!({
        "planner": pb.settings, "seed": args.seed, "top_k": base.k, "top_n": base.top_n,
        "max_paths": base.max_paths, "use_llm": args.use_llm,
    });
    std::fs::write(
        args.out_dir.join("ablation.txt"),
        format!("# kgreason ablate {settings}\n{table}"),
    )?;
    std::fs::write(
        args.out_dir.join("ablation.json"),
        serde_json::to_string_pretty(&json!({"settings": settings, "rows": summary}))? + "\n",
    )?;
    print!("{table}");
    Ok(())
}

fn profile(ctx: &Ctx, args: &ProfileArgs) -> CliResult {
    let g = load_graph(&args.io.graph, args.io.inverse_relations)?;
    let qa = load_qa(&args.io.qa)?;
    let client = if args.planner.backend == Backend::Llm {
        Some(ctx.client(&args.planner.llm)?.0)
    } else {
        None
    };
    let pb = make_planner(ctx, &g, &args.planner, client.as_ref())?;
    let report = profile_retrieval(&g, &qa, pb.planner.as_ref(), &args.k, ctx.max_paths(args.max_paths))?;
    print!("{}", report.to_text());
    if let Some(path) = &args.json_out {
        write_output(path, |w| {
            serde_json::to_writer_pretty(&mut *w, &report)?;
            writeln!(w)?;
            Ok(())
        })?;
    }
    Ok(())
}

fn uses_llm(cmd: &Command) -> bool {
    match cmd {
        Command::Plan(a) => a.planner.backend == Backend::Llm,
        Command::Answer(a) => a.mode == ModeArg::Llm,
        Command::Ablate(a) => a.use_llm || a.backend == Backend::Llm,
        Command::Profile(a) => a.planner.backend == Backend::Llm,
        _ => false,
    }
}

fn run(cli: Cli) -> CliResult {
    let ctx = Ctx {
        file: FileConfig::load(cli.config.as_deref()).map_err(CliError::usage)?,
    };
    let threads = cli.parallelism.unwrap_or_else(|| {
        if uses_llm(&cli.command) {
            4
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    });
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::usage(e.to_string()))?;
    pool.install(|| match &cli.command {
        Command::Kg(c) => kg(c),
        Command::Plans(c) => plans_extract(&ctx, c),
        Command::Dataset(c) => dataset_build(&ctx, c),
        Command::Generate(a) => generate(a),
        Command::Plan(a) => plan(&ctx, a),
        Command::Retrieve(a) => retrieve(&ctx, a),
        Command::Answer(a) => answer(&ctx, a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate_cmd(&ctx, a),
        Command::Profile(a) => profile(&ctx, a),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
