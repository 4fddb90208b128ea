//! Closed-loop episode simulator.
//!
//! Each episode retrieves cases for a task, ranks skills, calls the top
//! eligible one and draws a Bernoulli reward whose probability depends on
//! whether a useful case was injected and whether the called skill was
//! useful. Failed attempts are retried with the failed skill masked.

mod world;

use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::case_memory::{write_jsonl, CasePolicy, Retrieval, RetrievalMode, StateQuery};
use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::rng::{self, Rng};

pub use world::{task_id, SyntheticWorld, Task, WorldConfig};

/// Which memory tracks the agent may consult.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryTracks {
    pub cases: bool,
    pub skills: bool,
}

impl Default for MemoryTracks {
    fn default() -> Self {
        Self { cases: true, skills: true }
    }
}

impl MemoryTracks {
    pub const NONE: Self = Self { cases: false, skills: false };
    pub const CASES: Self = Self { cases: true, skills: false };
    pub const SKILLS: Self = Self { cases: false, skills: true };
    pub const BOTH: Self = Self { cases: true, skills: true };
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub hyper: HyperParams,
    pub memory: MemoryTracks,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.hyper.validate()?;
        self.world.validate()
    }

    /// Identifies the world an outcome came from: world config plus seed.
    pub fn world_id(&self, seed: u64) -> String {
        let cfg = serde_json::to_string(&self.world).unwrap_or_default();
        format!("{:016x}", rng::stable_hash(&format!("{cfg}/{seed}/{}", self.hyper.dim)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    /// Learned mode updates its memories.
    Train,
    /// Everything frozen.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub selected_case_ids: Vec<String>,
    pub ranked_skill_ids: Vec<String>,
    pub called_skill_id: Option<String>,
    pub case_hit: bool,
    pub skill_hit: bool,
    pub trap_selected: bool,
    pub reward: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub episode: u64,
    pub world_id: String,
    pub phase: Phase,
    pub mode: RetrievalMode,
    pub task_id: String,
    /// Cases injected on the final attempt.
    pub selected_case_ids: Vec<String>,
    /// Skill ranking on the final attempt.
    pub ranked_skill_ids: Vec<String>,
    /// One entry per attempt that called a skill.
    pub called_skill_ids: Vec<String>,
    pub reward: u8,
    pub first_attempt_success: bool,
    pub retries: u32,
    pub attempts: Vec<Attempt>,
}

impl EpisodeOutcome {
    pub fn success(&self) -> bool {
        self.reward == 1
    }

    /// Whether the first attempt injected a trap case.
    pub fn trap_selected(&self) -> bool {
        self.attempts.first().is_some_and(|a| a.trap_selected)
    }
}

/// A world, the learnable state and the random streams of one run.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub config: ExperimentConfig,
    pub mode: RetrievalMode,
    pub world: SyntheticWorld,
    pub policy: CasePolicy,
    pub outcomes: Vec<EpisodeOutcome>,
    world_id: String,
    policy_rng: Rng,
    dropout_rng: Rng,
    env_rng: Rng,
    next_task: usize,
}

impl Simulation {
    pub fn new(config: ExperimentConfig, mode: RetrievalMode, seed: u64) -> Result<Self> {
        config.validate()?;
        let world = SyntheticWorld::build(&config.world, config.hyper.dim, &mut rng::stream(seed, rng::WORLD))?;
        let policy = CasePolicy::new(&config.hyper, &mut rng::stream(seed, rng::INIT))?;
        Ok(Self {
            world_id: config.world_id(seed),
            config,
            mode,
            world,
            policy,
            outcomes: Vec::new(),
            policy_rng: rng::stream(seed, rng::POLICY),
            dropout_rng: rng::stream(seed, rng::DROPOUT),
            env_rng: rng::stream(seed, rng::ENVIRONMENT),
            next_task: 0,
        })
    }

    fn learning(&self, phase: Phase) -> bool {
        self.mode == RetrievalMode::Learned && phase == Phase::Train
    }

    /// Runs one episode on task index `ti` and appends its outcome.
    pub fn run_episode(&mut self, ti: usize, phase: Phase) -> Result<&EpisodeOutcome> {
        let task = self
            .world
            .tasks
            .get(ti)
            .ok_or_else(|| Error::NotFound(format!("task index {ti}")))?
            .clone();
        let hp = &self.config.hyper;
        let tracks = self.config.memory;
        let learning = self.learning(phase);

        let retrieval: Option<Retrieval> = if tracks.cases {
            Some(self.policy.retrieve(&self.world.cases, &task.embedding, hp, self.mode)?)
        } else {
            None
        };

        self.world.skills.clear_masks();
        // Utility updates are collected per attempt and applied together
        // once the episode ends.
        let mut skill_rewards: Vec<(String, bool)> = Vec::new();
        let mut attempts: Vec<Attempt> = Vec::new();
        let mut last_selection = Vec::new();
        for _ in 0..=self.world.config.max_retries {
            let selection = match &retrieval {
                Some(r) => self.policy.select(r, hp, &mut self.policy_rng),
                None => Vec::new(),
            };
            let selected_ids = retrieval.as_ref().map(|r| r.ids(&selection)).unwrap_or_default();

            let masked = self.world.skills.take_masks();
            let ranked_ids: Vec<String> = if tracks.skills {
                let mut q = StateQuery::new(task.index_text.clone(), task.embedding.clone());
                q.episode_t = self.policy.t;
                q.masked_skill_ids = masked;
                self.world.skills.rank(&q, hp)?.into_iter().map(|(s, _)| s.id.clone()).collect()
            } else {
                Vec::new()
            };
            let called = ranked_ids.first().cloned();

            let case_hit = selected_ids.iter().any(|id| task.useful_case_ids.contains(id));
            let skill_hit = called.as_ref().is_some_and(|id| task.useful_skill_ids.contains(id));
            let p = self.world.success_probability(case_hit, skill_hit);
            let success = self.env_rng.gen::<f64>() < p;

            if let Some(id) = &called {
                skill_rewards.push((id.clone(), success));
            }
            attempts.push(Attempt {
                trap_selected: selected_ids.iter().any(|id| task.trap_case_ids.contains(id)),
                selected_case_ids: selected_ids,
                ranked_skill_ids: ranked_ids,
                called_skill_id: called.clone(),
                case_hit,
                skill_hit,
                reward: success as u8,
            });
            last_selection = selection;
            if success {
                break;
            }
            if let Some(id) = &called {
                self.world.skills.mask_failed(id)?;
            }
        }
        self.world.skills.clear_masks();
        if learning {
            for (id, r) in &skill_rewards {
                self.world
                    .skills
                    .update_utilities(std::slice::from_ref(id), *r, hp)
                    .into_result()?;
            }
        }

        let last = attempts.last().expect("at least one attempt");
        let success = last.reward == 1;
        if let (true, Some(r)) = (learning, &retrieval) {
            self.policy
                .update(r, &last_selection, success, hp, &mut self.policy_rng, &mut self.dropout_rng)?;
        }

        let retries = attempts.len() as u32 - 1;
        let outcome = EpisodeOutcome {
            episode: self.outcomes.len() as u64,
            world_id: self.world_id.clone(),
            phase,
            mode: self.mode,
            task_id: task.task_id.clone(),
            selected_case_ids: last.selected_case_ids.clone(),
            ranked_skill_ids: last.ranked_skill_ids.clone(),
            called_skill_ids: attempts.iter().filter_map(|a| a.called_skill_id.clone()).collect(),
            reward: success as u8,
            first_attempt_success: success && retries == 0,
            retries,
            attempts,
        };
        self.outcomes.push(outcome);
        Ok(self.outcomes.last().expect("just pushed"))
    }

    /// Runs `episodes` episodes with tasks drawn round-robin.
    pub fn run(&mut self, episodes: usize, phase: Phase) -> Result<&[EpisodeOutcome]> {
        let start = self.outcomes.len();
        for _ in 0..episodes {
            let ti = self.next_task;
            self.next_task = (self.next_task + 1) % self.world.tasks.len();
            self.run_episode(ti, phase)?;
        }
        Ok(&self.outcomes[start..])
    }

    /// Outcome log and final stores: `outcomes.jsonl`, `tasks.jsonl`,
    /// `cases.jsonl`, `skills.jsonl`, `value_net.json`, `policy.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join("outcomes.jsonl"), &self.outcomes)?;
        write_jsonl(&dir.join("tasks.jsonl"), &self.world.tasks)?;
        self.world.cases.save_jsonl(dir.join("cases.jsonl"))?;
        self.world.skills.save_jsonl(dir.join("skills.jsonl"))?;
        self.policy.net.save(dir.join("value_net.json"))?;
        let state = serde_json::json!({
            "mode": self.mode,
            "t": self.policy.t,
            "optimizer_steps": self.policy.optimizer.steps(),
            "alpha": self.policy.alpha(&self.config.hyper),
            "episodes": self.outcomes.len(),
        });
        let path = dir.join("policy.json");
        std::fs::write(&path, format!("{}\n", serde_json::to_string_pretty(&state)?)).map_err(|e| Error::io(&path, e))
    }
}

/// `episodes` training-phase episodes from a fresh world.
pub fn run_experiment(config: &ExperimentConfig, episodes: usize, mode: RetrievalMode, seed: u64) -> Result<Simulation> {
    if episodes == 0 {
        return Err(Error::invalid("episodes must be at least 1"));
    }
    let mut sim = Simulation::new(config.clone(), mode, seed)?;
    sim.run(episodes, Phase::Train)?;
    Ok(sim)
}

/// Training followed by a frozen evaluation block.
pub fn run_protocol(config: &ExperimentConfig, mode: RetrievalMode, seed: u64, train: usize, eval: usize) -> Result<Simulation> {
    let mut sim = Simulation::new(config.clone(), mode, seed)?;
    sim.run(train, Phase::Train)?;
    sim.run(eval, Phase::Eval)?;
    Ok(sim)
}
