use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use mic_core::agent::Mode;
use mic_core::codebook::Codebook;
use mic_core::perceiver::{perceive_seeded, synthesize_features, FeatureStore, PerceiverSource, DEFAULT_TOP_K};
use mic_core::planner::prompts;
use mic_core::runner::{
    builtin_demonstrations, eval_dir, run, write_atomic, EpisodeSettings, LmSpec, PerceiverKind, RunConfig,
};
use mic_core::selector::{
    load_demonstrations, normalize_key, rank_demonstrations, Demonstration, EmbeddingProvider, FileStore,
    HashEmbedder,
};
use mic_core::world::{gen_world, load_environment, load_tasks, save_environment, save_tasks, GeneratorConfig, Task};

#[derive(Parser)]
#[command(name = "mic", version, about = "Interactive LLM prompting for remote object navigation in graph houses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic house, its tasks, demonstrations and embeddings.
    GenWorld(GenWorldArgs),
    /// Run every task under one configuration and write traces plus a report.
    Run(Box<RunArgs>),
    /// Recompute metrics from a trace directory.
    Eval(EvalArgs),
    /// Inspect individual protocol stages.
    #[command(subcommand)]
    Debug(DebugCommand),
}

#[derive(Args)]
struct GenWorldArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    rooms: usize,
    #[arg(long, default_value_t = 3)]
    nodes_per_room: usize,
    #[arg(long, default_value_t = 20)]
    tasks: usize,
    #[arg(long)]
    max_steps: Option<usize>,
    /// Also write synthetic view features of this dimension to features.bin.
    #[arg(long)]
    features_dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PerceiverArg {
    Groundtruth,
    Features,
}

#[derive(Clone, Copy, ValueEnum)]
enum LmArg {
    Gateway,
    Scripted,
    Groundtruth,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long, default_value = "full", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, value_enum, default_value = "groundtruth")]
    perceiver: PerceiverArg,
    #[arg(long, default_value_t = 0.0)]
    p_noise: f64,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "groundtruth")]
    lm: LmArg,
    #[arg(long, env = "MIC_LM_URL")]
    lm_url: Option<String>,
    #[arg(long)]
    script: Option<PathBuf>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of trace files.
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    tasks: PathBuf,
    #[arg(long)]
    world: PathBuf,
    #[arg(long)]
    allow_mixed: bool,
    /// Report CSV path (defaults to eval.csv next to the trace directory).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum DebugCommand {
    /// Rank demonstrations for an instruction.
    SelectDemo {
        #[arg(long)]
        demos: PathBuf,
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        instruction: String,
    },
    /// Print the percept at one node.
    Perceive {
        #[arg(long)]
        world: PathBuf,
        #[arg(long)]
        node: String,
        #[arg(long, value_enum, default_value = "groundtruth")]
        perceiver: PerceiverArg,
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        p_noise: f64,
        #[arg(long, default_value_t = DEFAULT_TOP_K)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the exact bytes of one prompt.
    Prompt(PromptArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Stage {
    GospRecognition,
    GospLocation,
    Sodp,
    Static,
}

#[derive(Args)]
struct PromptArgs {
    #[arg(long, value_enum)]
    stage: Stage,
    #[arg(long, default_value = "")]
    instruction: String,
    /// Target object for the location prompt.
    #[arg(long, default_value = "")]
    target: String,
    #[arg(long, default_value = "")]
    room: String,
    /// Comma-separated visible objects.
    #[arg(long, default_value = "")]
    objects: String,
    /// Steps planned so far, in order.
    #[arg(long = "step")]
    steps: Vec<String>,
    /// Demonstration file; the best match for the instruction is used.
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

/// Failure classes mapped to process exit codes.
enum Failure {
    Episodes,
    Setup(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Setup(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenWorld(a) => gen_world_cmd(&a).map_err(Failure::from),
        Command::Run(a) => run_cmd(&a),
        Command::Eval(a) => eval_cmd(&a).map_err(Failure::from),
        Command::Debug(d) => debug_cmd(d).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Episodes) => ExitCode::from(1),
        Err(Failure::Setup(e)) => {
            // library errors already carry their causes in the message
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Writes to stdout, treating a closed pipe as a normal end of output.
fn emit(text: &str) -> Result<()> {
    match io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn embedder_for(embeddings: Option<&Path>) -> Result<Box<dyn EmbeddingProvider>> {
    Ok(match embeddings {
        Some(p) => Box::new(FileStore::load(p)?),
        None => Box::new(HashEmbedder::default()),
    })
}

fn gen_world_cmd(a: &GenWorldArgs) -> Result<()> {
    let mut cfg = GeneratorConfig {
        rooms: a.rooms,
        nodes_per_room: a.nodes_per_room,
        tasks: a.tasks,
        ..Default::default()
    };
    if let Some(m) = a.max_steps {
        cfg.max_steps = m;
    }
    let (graph, tasks) = gen_world(a.seed, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| anyhow!("cannot create {}: {e}", a.out.display()))?;
    save_environment(&graph, &a.out.join("env.json"))?;
    save_tasks(&tasks, &a.out.join("tasks.json"))?;

    let demos = builtin_demonstrations();
    let demo_json = serde_json::to_string_pretty(&demos)? + "\n";
    write_atomic(&a.out.join("demos.json"), demo_json.as_bytes())?;

    let hasher = HashEmbedder::default();
    let mut store = FileStore::default();
    let texts = demos
        .iter()
        .map(|d| d.low_level_instruction.as_str())
        .chain(tasks.iter().map(|t| t.instruction.as_str()));
    for text in texts {
        let v = hasher.embed(text)?;
        store.insert(&normalize_key(text), v.values().iter().map(|&x| x as f32).collect())?;
    }
    write_atomic(&a.out.join("embeddings.jsonl"), store.to_jsonl().as_bytes())?;

    if let Some(dim) = a.features_dim {
        let rooms = Codebook::default_rooms();
        let objects = Codebook::default_objects();
        let features = synthesize_features(&graph, &rooms, &objects, dim, a.seed)?;
        write_atomic(&a.out.join("features.bin"), &features.to_bytes())?;
    }
    emit(&format!(
        "{}: {} nodes, {} edges, {} rooms, {} tasks, {} demonstrations -> {}\n",
        graph.id(),
        graph.len(),
        graph.edges().len(),
        graph.rooms().len(),
        tasks.len(),
        demos.len(),
        a.out.display()
    ))
}

fn run_config(a: &RunArgs) -> Result<RunConfig> {
    let lm = match a.lm {
        LmArg::Groundtruth => LmSpec::GroundTruth,
        LmArg::Scripted => match &a.script {
            Some(path) => LmSpec::Scripted { path: path.clone() },
            None => bail!("--lm scripted needs --script"),
        },
        LmArg::Gateway => match &a.lm_url {
            Some(url) => LmSpec::Gateway { url: url.clone() },
            None => bail!("--lm gateway needs --lm-url or MIC_LM_URL"),
        },
    };
    if a.script.is_some() && !matches!(a.lm, LmArg::Scripted) {
        bail!("--script is only used with --lm scripted");
    }
    Ok(RunConfig {
        settings: EpisodeSettings {
            mode: a.mode,
            perceiver: match a.perceiver {
                PerceiverArg::Groundtruth => PerceiverKind::GroundTruth,
                PerceiverArg::Features => PerceiverKind::Features,
            },
            p_noise: a.p_noise,
            k: a.k,
            seed: a.seed,
            lm,
            max_steps: a.max_steps,
        },
        world: a.world.clone(),
        tasks: a.tasks.clone(),
        demos: a.demos.clone(),
        embeddings: a.embeddings.clone(),
        features: a.features.clone(),
        jobs: a.jobs,
        out: a.out.clone(),
    })
}

fn run_cmd(a: &RunArgs) -> Result<(), Failure> {
    let config = run_config(a)?;
    let summary = run(&config).map_err(anyhow::Error::from)?;
    let failures = summary.failures();
    let mut out = format!(
        "{} episodes, mode {}, config {}\n",
        summary.outcomes.len(),
        config.settings.mode,
        summary.config_hash
    );
    if let Some(r) = &summary.report {
        out.push_str(&r.to_table());
    }
    emit(&out)?;
    for (task, err) in &failures {
        eprintln!("episode {task} failed: {err}");
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Episodes)
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let graph = load_environment(&a.world)?;
    let tasks = load_tasks(&a.tasks)?;
    let (_, report) = eval_dir(&a.traces, &tasks, &graph, a.allow_mixed)?;
    let out = match &a.out {
        Some(p) => p.clone(),
        None => a.traces.parent().unwrap_or(Path::new(".")).join("eval.csv"),
    };
    write_atomic(&out, report.to_csv().as_bytes())?;
    emit(&report.to_table())
}

fn debug_cmd(cmd: DebugCommand) -> Result<()> {
    match cmd {
        DebugCommand::SelectDemo {
            demos,
            embeddings,
            instruction,
        } => {
            let demos = load_demonstrations(&demos)?;
            let embedder = embedder_for(embeddings.as_deref())?;
            let ranked = rank_demonstrations(&instruction, &demos, embedder.as_ref())?;
            let (best, score) = ranked[0];
            let mut out = format!("selected {} ({score:.6}): {}\n", demos[best].id, demos[best].low_level_instruction);
            for (rank, (i, s)) in ranked.iter().enumerate() {
                out.push_str(&format!(
                    "{:>3}  {s:>9.6}  {}  {}\n",
                    rank + 1,
                    demos[*i].id,
                    demos[*i].low_level_instruction
                ));
            }
            emit(&out)?;
        }
        DebugCommand::Perceive {
            world,
            node,
            perceiver,
            features,
            p_noise,
            k,
            seed,
        } => {
            let graph = load_environment(&world)?;
            let rooms = Codebook::default_rooms();
            let objects = Codebook::default_objects();
            let store;
            let source = match (perceiver, features) {
                (PerceiverArg::Groundtruth, _) => PerceiverSource::GroundTruth {
                    rooms: &rooms,
                    objects: &objects,
                    p_noise,
                },
                (PerceiverArg::Features, Some(p)) => {
                    store = FeatureStore::read(&p)?;
                    PerceiverSource::Features {
                        store: &store,
                        rooms: &rooms,
                        objects: &objects,
                    }
                }
                (PerceiverArg::Features, None) => bail!("--perceiver features needs --features"),
            };
            let percept = perceive_seeded(&source, &graph, &node, k, seed)?;
            emit(&format!(
                "{}\n{}\n",
                serde_json::to_string_pretty(&percept)?,
                prompts::scene_line(&percept)
            ))?;
        }
        DebugCommand::Prompt(p) => emit(&render_prompt(&p)?)?,
    }
    Ok(())
}

fn render_prompt(p: &PromptArgs) -> Result<String> {
    let task = Task {
        id: "debug".into(),
        instruction: p.instruction.clone(),
        target_object_category: p.target.clone(),
        goal_node_ids: vec![],
        target_object_ids: vec![],
        start_node: String::new(),
        max_steps: 0,
    };
    let demo = || -> Result<Demonstration> {
        let demos = match &p.demos {
            Some(path) => load_demonstrations(path)?,
            None => builtin_demonstrations(),
        };
        let embedder = embedder_for(p.embeddings.as_deref())?;
        let (i, _) = rank_demonstrations(&p.instruction, &demos, embedder.as_ref())?[0];
        Ok(demos[i].clone())
    };
    Ok(match p.stage {
        Stage::GospRecognition => prompts::gosp_recognition_prompt(&task),
        Stage::GospLocation => prompts::gosp_location_prompt(&p.target),
        Stage::Sodp => {
            let percept = mic_core::perceiver::ScenePercept {
                node_id: String::new(),
                room: p.room.clone(),
                room_scores: vec![],
                objects: p
                    .objects
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect(),
                object_scores: vec![],
            };
            prompts::sodp_prompt(&percept, &demo()?, &p.instruction, &p.steps)
        }
        Stage::Static => prompts::static_prompt(&demo()?, &p.instruction),
    })
}
