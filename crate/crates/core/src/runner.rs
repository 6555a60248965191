//! Batch execution of episode suites and trace-directory evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agent::{
    read_trace, render_trace, run_episode, Episode, EpisodeConfig, EpisodeTrace, KeywordPolicy, Mode, StopReason,
};
use crate::codebook::Codebook;
use crate::lm_client::{ClientConfig, GatewayClient, GroundTruthOracle, LmClient, LmError, ScriptedOracle};
use crate::metrics::{aggregate, EpisodeMetrics, MetricsError, MetricsReport};
use crate::perceiver::{FeatureStore, PerceiverError, PerceiverSource, DEFAULT_TOP_K};
use crate::selector::{load_demonstrations, Demonstration, EmbeddingProvider, FileStore, HashEmbedder, SelectorError};
use crate::world::{gen_world, load_environment, load_tasks, GeneratorConfig, NavGraph, Task, WorldError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error(transparent)]
    Perceiver(#[from] PerceiverError),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {message}")]
    Trace { path: PathBuf, message: String },
    #[error("traces come from {0} different configurations (pass --allow-mixed to evaluate anyway)")]
    MixedConfig(usize),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), RunError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, contents).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerceiverKind {
    GroundTruth,
    Features,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum LmSpec {
    Gateway { url: String },
    Scripted { path: PathBuf },
    GroundTruth,
}

/// Everything that determines the content of an episode's trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSettings {
    pub mode: Mode,
    pub perceiver: PerceiverKind,
    pub p_noise: f64,
    pub k: usize,
    pub seed: u64,
    pub lm: LmSpec,
    pub max_steps: Option<usize>,
}

impl Default for EpisodeSettings {
    fn default() -> Self {
        Self {
            mode: Mode::Full,
            perceiver: PerceiverKind::GroundTruth,
            p_noise: 0.0,
            k: DEFAULT_TOP_K,
            seed: 0,
            lm: LmSpec::GroundTruth,
            max_steps: None,
        }
    }
}

impl EpisodeSettings {
    pub fn validate(&self) -> Result<(), RunError> {
        if !(0.0..=1.0).contains(&self.p_noise) {
            return Err(RunError::Config(format!("p_noise {} is outside [0, 1]", self.p_noise)));
        }
        if self.k == 0 {
            return Err(RunError::Config("k must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub settings: EpisodeSettings,
    pub world: PathBuf,
    pub tasks: PathBuf,
    pub demos: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub jobs: usize,
    pub out: PathBuf,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), RunError> {
        self.settings.validate()?;
        match (self.settings.perceiver, &self.features) {
            (PerceiverKind::Features, None) => {
                return Err(RunError::Config("the features perceiver needs --features".into()))
            }
            (PerceiverKind::GroundTruth, Some(_)) => {
                return Err(RunError::Config("--features is only used with --perceiver features".into()))
            }
            _ => {}
        }
        if self.settings.mode.plans_steps() && self.demos.is_none() {
            return Err(RunError::Config(format!("mode {} needs --demos", self.settings.mode)));
        }
        if self.jobs == 0 {
            return Err(RunError::Config("--jobs must be at least 1".into()));
        }
        Ok(())
    }

    /// Digest of the flags that shape trace content. Parallelism and the
    /// output directory are excluded.
    pub fn config_hash(&self) -> String {
        #[derive(Serialize)]
        struct Canonical<'a> {
            settings: &'a EpisodeSettings,
            world: &'a Path,
            tasks: &'a Path,
            demos: Option<&'a Path>,
            embeddings: Option<&'a Path>,
            features: Option<&'a Path>,
        }
        let canonical = Canonical {
            settings: &self.settings,
            world: &self.world,
            tasks: &self.tasks,
            demos: self.demos.as_deref(),
            embeddings: self.embeddings.as_deref(),
            features: self.features.as_deref(),
        };
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

/// Per-episode noise seed derived from the run seed and the task id.
pub fn episode_seed(run_seed: u64, task_id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(run_seed.to_le_bytes());
    h.update(task_id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// A small corpus of fine-grained demonstrations in the style of
/// step-by-step navigation instructions.
pub fn builtin_demonstrations() -> Vec<Demonstration> {
    let raw: [(&str, &str, &[&str]); 8] = [
        (
            "d00",
            "Walk out of the bedroom, go down the hallway and stop in the kitchen",
            &["Exit the bedroom", "Go to the hallway", "Go to the kitchen"],
        ),
        (
            "d01",
            "Leave the bathroom, cross the living room and wait by the sofa",
            &["Exit the bathroom", "Go to the living room", "Stop by the sofa"],
        ),
        (
            "d02",
            "Go through the hallway into the laundry room and stand next to the washing machine",
            &["Go to the hallway", "Go to the laundry room", "Stop at the washing machine"],
        ),
        (
            "d03",
            "Exit the office, walk to the dining room and stop at the table",
            &["Exit the office", "Go to the dining room", "Stop at the table"],
        ),
        (
            "d04",
            "Turn around, leave the kitchen and enter the bedroom on the left",
            &["Exit the kitchen", "Go to the bedroom"],
        ),
        (
            "d05",
            "Walk past the stairs to the garage and stop near the car",
            &["Go to the hallway", "Go to the garage", "Stop near the car"],
        ),
        (
            "d06",
            "Leave the living room, go down the hallway to the bathroom and wait at the sink",
            &["Exit the living room", "Go to the hallway", "Go to the bathroom", "Stop at the sink"],
        ),
        (
            "d07",
            "Walk out of the closet, through the bedroom and into the bathroom",
            &["Exit the closet", "Go to the bedroom", "Go to the bathroom"],
        ),
    ];
    raw.iter()
        .map(|(id, key, steps)| Demonstration {
            id: id.to_string(),
            low_level_instruction: key.to_string(),
            steps: steps.iter().map(|s| s.to_string()).collect(),
        })
        .collect()
}

/// The shared, read-only inputs of a batch.
pub struct Suite {
    pub graph: NavGraph,
    pub tasks: Vec<Task>,
    pub demos: Vec<Demonstration>,
    pub embedder: Box<dyn EmbeddingProvider>,
    pub features: Option<FeatureStore>,
    pub rooms: Codebook,
    pub objects: Codebook,
}

impl Suite {
    /// A generated house with the built-in demonstrations and hash embeddings.
    pub fn synthetic(seed: u64, config: &GeneratorConfig) -> Result<Self, RunError> {
        let (graph, tasks) = gen_world(seed, config)?;
        Ok(Self {
            graph,
            tasks,
            demos: builtin_demonstrations(),
            embedder: Box::new(HashEmbedder::default()),
            features: None,
            rooms: Codebook::default_rooms(),
            objects: Codebook::default_objects(),
        })
    }

    /// Loads the files named in `config`. Without an embeddings file, the
    /// gateway embeds when it is the configured model, else hash embeddings
    /// are used.
    pub fn load(config: &RunConfig) -> Result<Self, RunError> {
        let graph = load_environment(&config.world)?;
        let tasks = load_tasks(&config.tasks)?;
        for t in &tasks {
            graph.validate_task(t)?;
        }
        let demos = match &config.demos {
            Some(p) => load_demonstrations(p)?,
            None => Vec::new(),
        };
        let embedder: Box<dyn EmbeddingProvider> = match (&config.embeddings, &config.settings.lm) {
            (Some(p), _) => Box::new(FileStore::load(p)?),
            (None, LmSpec::Gateway { url }) => Box::new(GatewayClient::new(ClientConfig::new(url.clone()))?),
            (None, _) => Box::new(HashEmbedder::default()),
        };
        let features = match &config.features {
            Some(p) => Some(FeatureStore::read(p)?),
            None => None,
        };
        Ok(Self {
            graph,
            tasks,
            demos,
            embedder,
            features,
            rooms: Codebook::default_rooms(),
            objects: Codebook::default_objects(),
        })
    }
}

/// One task's result: a trace, or the reason none could be produced.
#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub task_id: String,
    pub seed: u64,
    pub result: Result<EpisodeTrace, String>,
}

impl EpisodeOutcome {
    /// Set for setup failures and for episodes that ended with an error.
    pub fn error(&self) -> Option<&str> {
        match &self.result {
            Err(e) => Some(e),
            Ok(t) if t.stop_reason == StopReason::Error => Some(t.error.as_deref().unwrap_or("episode error")),
            Ok(_) => None,
        }
    }
}

enum SharedLm {
    Gateway(GatewayClient),
    Scripted(ScriptedOracle),
    PerTask,
}

/// Runs every task of the suite, `jobs` at a time. Outcomes are in task order.
pub fn run_suite(suite: &Suite, settings: &EpisodeSettings, jobs: usize) -> Result<Vec<EpisodeOutcome>, RunError> {
    settings.validate()?;
    let shared = match &settings.lm {
        LmSpec::Gateway { url } => SharedLm::Gateway(GatewayClient::new(ClientConfig::new(url.clone()))?),
        LmSpec::Scripted { path } => SharedLm::Scripted(ScriptedOracle::from_file(path)?),
        LmSpec::GroundTruth => SharedLm::PerTask,
    };
    let perceiver = match (settings.perceiver, &suite.features) {
        (PerceiverKind::GroundTruth, _) => PerceiverSource::GroundTruth {
            rooms: &suite.rooms,
            objects: &suite.objects,
            p_noise: settings.p_noise,
        },
        (PerceiverKind::Features, Some(store)) => PerceiverSource::Features {
            store,
            rooms: &suite.rooms,
            objects: &suite.objects,
        },
        (PerceiverKind::Features, None) => return Err(RunError::Config("no feature store loaded".into())),
    };
    let policy = KeywordPolicy {
        rooms: &suite.rooms,
        objects: &suite.objects,
    };

    let one = |task: &Task| -> EpisodeOutcome {
        let seed = episode_seed(settings.seed, &task.id);
        let oracle;
        let lm: &dyn LmClient = match &shared {
            SharedLm::Gateway(c) => c,
            SharedLm::Scripted(s) => s,
            SharedLm::PerTask => match GroundTruthOracle::new(&suite.graph, task) {
                Ok(o) => {
                    oracle = o;
                    &oracle
                }
                Err(e) => {
                    return EpisodeOutcome {
                        task_id: task.id.clone(),
                        seed,
                        result: Err(e.to_string()),
                    }
                }
            },
        };
        let env = Episode {
            graph: &suite.graph,
            perceiver,
            demos: &suite.demos,
            embedder: suite.embedder.as_ref(),
            lm,
            policy: &policy,
        };
        let config = EpisodeConfig {
            mode: settings.mode,
            k: settings.k,
            seed,
            max_steps: settings.max_steps,
        };
        EpisodeOutcome {
            task_id: task.id.clone(),
            seed,
            result: run_episode(&env, task, &config).map_err(|e| e.to_string()),
        }
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunError::Config(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| suite.tasks.par_iter().map(one).collect()))
}

#[derive(Debug)]
pub struct RunSummary {
    pub config_hash: String,
    pub outcomes: Vec<EpisodeOutcome>,
    pub episodes: Vec<EpisodeMetrics>,
    /// Absent when no episode produced a trace.
    pub report: Option<MetricsReport>,
}

impl RunSummary {
    pub fn failures(&self) -> Vec<(&str, &str)> {
        self.outcomes
            .iter()
            .filter_map(|o| o.error().map(|e| (o.task_id.as_str(), e)))
            .collect()
    }
}

pub const TRACE_DIR: &str = "traces";
pub const REPORT_FILE: &str = "report.csv";

/// Loads inputs, runs every task and writes `traces/{task_id}.jsonl` plus
/// `report.csv` under the output directory.
pub fn run(config: &RunConfig) -> Result<RunSummary, RunError> {
    config.validate()?;
    let suite = Suite::load(config)?;
    let hash = config.config_hash();
    let outcomes = run_suite(&suite, &config.settings, config.jobs)?;

    let trace_dir = config.out.join(TRACE_DIR);
    fs::create_dir_all(&trace_dir).map_err(io_err(&trace_dir))?;
    let traces: Vec<EpisodeTrace> = outcomes.iter().filter_map(|o| o.result.as_ref().ok().cloned()).collect();
    for o in &outcomes {
        if let Ok(t) = &o.result {
            let path = trace_dir.join(format!("{}.jsonl", t.task_id));
            write_atomic(&path, render_trace(t, o.seed, &hash).as_bytes())?;
        }
    }

    let (episodes, report) = if traces.is_empty() {
        (Vec::new(), None)
    } else {
        let (e, r) = aggregate(&traces, &suite.tasks, &suite.graph)?;
        (e, Some(r))
    };
    if let Some(r) = &report {
        let path = config.out.join(REPORT_FILE);
        write_atomic(&path, r.to_csv().as_bytes())?;
    }
    Ok(RunSummary {
        config_hash: hash,
        outcomes,
        episodes,
        report,
    })
}

/// Recomputes metrics from a directory of trace files.
pub fn eval_dir(
    trace_dir: &Path,
    tasks: &[Task],
    graph: &NavGraph,
    allow_mixed: bool,
) -> Result<(Vec<EpisodeMetrics>, MetricsReport), RunError> {
    let mut files: Vec<PathBuf> = fs::read_dir(trace_dir)
        .map_err(io_err(trace_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(RunError::Trace {
            path: trace_dir.to_path_buf(),
            message: "no trace files".into(),
        });
    }
    let mut hashes: Vec<String> = Vec::new();
    let mut traces = Vec::with_capacity(files.len());
    for p in &files {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        let (header, trace) = read_trace(&text).map_err(|e| RunError::Trace {
            path: p.clone(),
            message: e.to_string(),
        })?;
        if !hashes.contains(&header.config_hash) {
            hashes.push(header.config_hash);
        }
        traces.push(trace);
    }
    if hashes.len() > 1 && !allow_mixed {
        return Err(RunError::MixedConfig(hashes.len()));
    }
    Ok(aggregate(&traces, tasks, graph)?)
}
