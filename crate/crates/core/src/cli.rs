//! Command-line front end. Tables go to stdout as TSV; errors go to stderr
//! with exit code 2 for contract violations and 3 for I/O or parse failures.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::case_memory::{read_jsonl, CasePolicy, CaseStore, RetrievalMode, StateQuery};
use crate::embedding::{embed_text, Embedding, EmbeddingTable};
use crate::error::{Error, Result};
use crate::geometry::{self, DEFAULT_POINTS, DEFAULT_RESOLUTION};
use crate::hyper::HyperParams;
use crate::metrics::{aggregate_metrics, compare_modes, comparison_tsv, fmt_opt};
use crate::rng;
use crate::sim::{EpisodeOutcome, ExperimentConfig, Phase, Simulation};
use crate::skill_memory::SkillStore;
use crate::value_net::ValueNet;

#[derive(Debug, Parser)]
#[command(name = "memloop", version, about = "Memory-augmented retrieval engine and episode simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes on a synthetic world and write the log and final stores.
    Simulate(SimulateArgs),
    /// Rank case candidates for a query.
    Retrieve(RetrieveArgs),
    /// Skill library operations.
    #[command(subcommand)]
    Skills(SkillsCommand),
    /// Geometry metrics.
    #[command(subcommand)]
    Geo(GeoCommand),
    /// Aggregate SUC, Pass@1 and AVG Re from an outcome log.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Learned,
    Semantic,
}

impl From<ModeArg> for RetrievalMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Learned => RetrievalMode::Learned,
            ModeArg::Semantic => RetrievalMode::Semantic,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment config JSON (world, hyper, memory); defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: ModeArg,
    /// Training episodes.
    #[arg(long)]
    pub episodes: usize,
    /// Frozen evaluation episodes run after training.
    #[arg(long, default_value_t = 0)]
    pub eval_episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Where query embeddings come from.
#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub query: String,
    /// Look the query up in this embedding table instead of hashing it.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Seed of the hash embedder.
    #[arg(long, default_value_t = 0)]
    pub embed_seed: u64,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[command(flatten)]
    pub query: QueryArgs,
    /// Cases to inject.
    #[arg(long)]
    pub k: usize,
    /// Value network parameters; required unless --semantic-only.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Annealing counter.
    #[arg(long, default_value_t = 0)]
    pub t: u64,
    #[arg(long)]
    pub semantic_only: bool,
    /// Hyperparameter JSON.
    #[arg(long)]
    pub hyper: Option<PathBuf>,
    /// Seed of the selection draw.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum SkillsCommand {
    /// Rank eligible skills for a query.
    Rank {
        #[arg(long)]
        store: PathBuf,
        #[command(flatten)]
        query: QueryArgs,
        /// Skill ids to mask for this round, comma separated.
        #[arg(long, value_delimiter = ',')]
        masked: Vec<String>,
        #[arg(long)]
        hyper: Option<PathBuf>,
    },
    /// Apply one reward to the called skills and rewrite the store.
    Update {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        called: Vec<String>,
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
        reward: u8,
        #[arg(long)]
        hyper: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum GeoCommand {
    /// Print `iou cd hd` for a generated and a reference model.
    Compare {
        #[arg(long = "gen")]
        generated: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long, default_value_t = DEFAULT_POINTS)]
        points: usize,
        #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
        res: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Train,
    Eval,
    All,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Semantic-mode log to compare against `--log`.
    #[arg(long)]
    pub compare: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PhaseArg::All)]
    pub phase: PhaseArg,
}

fn read_json<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn load_hyper(path: Option<&Path>) -> Result<HyperParams> {
    let hp: HyperParams = path.map(read_json).transpose()?.unwrap_or_default();
    hp.validate()?;
    Ok(hp)
}

fn query_embedding(q: &QueryArgs, dim: usize) -> Result<Embedding> {
    let e = match &q.embeddings {
        Some(path) => {
            let table = EmbeddingTable::load(path)?;
            table
                .get(&q.query)
                .cloned()
                .ok_or_else(|| Error::NotFound(format!("query {:?} in {}", q.query, path.display())))?
        }
        None => embed_text(&q.query, dim, q.embed_seed)?,
    };
    e.expect_dim(dim)?;
    Ok(e)
}

fn simulate(a: &SimulateArgs) -> Result<String> {
    let config: ExperimentConfig = a.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    if a.episodes == 0 {
        return Err(Error::invalid("--episodes must be at least 1"));
    }
    let mut sim = Simulation::new(config, a.mode.into(), a.seed)?;
    sim.run(a.episodes, Phase::Train)?;
    sim.run(a.eval_episodes, Phase::Eval)?;
    sim.save(&a.out)?;
    Ok(aggregate_metrics(&sim.outcomes)?.to_tsv())
}

fn retrieve(a: &RetrieveArgs) -> Result<String> {
    let mut hp = load_hyper(a.hyper.as_deref())?;
    hp.k = a.k;
    if hp.k == 0 || hp.k > hp.k0 {
        return Err(Error::invalid(format!("--k must lie in 1..={}", hp.k0)));
    }
    let store = CaseStore::load_jsonl(&a.store)?;
    let state = query_embedding(&a.query, store.dim())?;
    let (mode, net) = if a.semantic_only {
        (RetrievalMode::Semantic, ValueNet::zeros(store.dim(), &[1], 0.0)?)
    } else {
        let path = a.params.as_deref().ok_or_else(|| Error::invalid("--params is required unless --semantic-only"))?;
        (RetrievalMode::Learned, ValueNet::load(path)?)
    };
    if net.dim() != store.dim() {
        return Err(Error::invalid(format!("value net dimension {} != store dimension {}", net.dim(), store.dim())));
    }
    let mut policy = CasePolicy::from_net(net, &hp);
    policy.t = a.t;
    let r = policy.retrieve(&store, &state, &hp, mode)?;
    let picked = policy.select(&r, &hp, &mut rng::stream(a.seed, rng::POLICY));

    let mut order: Vec<usize> = (0..r.scored.len()).collect();
    order.sort_by(|&x, &y| {
        r.scored[y]
            .fused
            .total_cmp(&r.scored[x].fused)
            .then_with(|| r.scored[x].case_id.cmp(&r.scored[y].case_id))
    });
    let mut out = String::from("rank\tcase_id\ts_sem\ts_val\tfused\tprob\tselected\n");
    for (rank, &i) in order.iter().enumerate() {
        let c = &r.scored[i];
        let sel = picked.iter().position(|&p| p == i).map_or_else(|| "-".to_string(), |p| (p + 1).to_string());
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{sel}",
            rank + 1,
            c.case_id,
            c.s_sem,
            c.s_val,
            c.fused,
            r.probs[i]
        );
    }
    Ok(out)
}

fn skills(cmd: &SkillsCommand) -> Result<String> {
    match cmd {
        SkillsCommand::Rank {
            store,
            query,
            masked,
            hyper,
        } => {
            let hp = load_hyper(hyper.as_deref())?;
            let store = SkillStore::load_jsonl(store)?;
            let mut q = StateQuery::new(query.query.clone(), query_embedding(query, store.dim())?);
            q.masked_skill_ids = masked.iter().cloned().collect();
            let mut out = String::from("rank\tskill_id\tscore\tutility\n");
            for (i, (s, score)) in store.rank(&q, &hp)?.into_iter().enumerate() {
                let _ = writeln!(out, "{}\t{}\t{score:.6}\t{:.6}", i + 1, s.id, s.utility);
            }
            Ok(out)
        }
        SkillsCommand::Update {
            store: path,
            called,
            reward,
            hyper,
        } => {
            let hp = load_hyper(hyper.as_deref())?;
            let mut store = SkillStore::load_jsonl(path)?;
            let report = store.update_utilities(called, *reward == 1, &hp);
            store.save_jsonl(path)?;
            let mut out = String::from("skill_id\tbefore\tafter\tdisposition\n");
            for c in &report.changes {
                let d = c.disposed.map_or("-".to_string(), |d| format!("{d:?}").to_lowercase());
                let _ = writeln!(out, "{}\t{:.6}\t{:.6}\t{d}", c.id, c.before, c.after);
            }
            if report.unknown.is_empty() {
                Ok(out)
            } else {
                print!("{out}");
                report.into_result().map(|_| String::new())
            }
        }
    }
}

fn geo(cmd: &GeoCommand) -> Result<String> {
    let GeoCommand::Compare {
        generated,
        reference,
        points,
        res,
        seed,
    } = cmd;
    let (g, _) = geometry::load_geometry(generated)?;
    let (r, _) = geometry::load_geometry(reference)?;
    let c = geometry::compare(&g, &r, *points, *res, &mut rng::stream(*seed, rng::ENVIRONMENT))?;
    Ok(format!("{}\t{:.9}\t{:.9}\n", fmt_opt(c.iou), c.chamfer, c.hausdorff))
}

fn load_log(path: &Path, phase: PhaseArg) -> Result<Vec<EpisodeOutcome>> {
    let all: Vec<EpisodeOutcome> = read_jsonl(path)?;
    Ok(all
        .into_iter()
        .filter(|o| match phase {
            PhaseArg::All => true,
            PhaseArg::Train => o.phase == Phase::Train,
            PhaseArg::Eval => o.phase == Phase::Eval,
        })
        .collect())
}

fn report(a: &ReportArgs) -> Result<String> {
    let learned = aggregate_metrics(&load_log(&a.log, a.phase)?)?;
    match &a.compare {
        None => Ok(learned.to_tsv()),
        Some(other) => {
            let semantic = aggregate_metrics(&load_log(other, a.phase)?)?;
            Ok(comparison_tsv(&compare_modes(&learned, &semantic)?))
        }
    }
}

/// Runs a parsed command and returns its stdout.
pub fn run(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Retrieve(a) => retrieve(a),
        Command::Skills(c) => skills(c),
        Command::Geo(c) => geo(c),
        Command::Report(a) => report(a),
    }
}

pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        3
    } else {
        2
    }
}

/// Process entry point; returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
