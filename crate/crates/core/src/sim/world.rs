//! Seeded synthetic worlds with planted useful and trap memories.

use std::collections::BTreeSet;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::case_memory::{CaseEntry, CaseStore};
use crate::embedding::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::skill_memory::{SkillEntry, SkillStore};

/// World shape and success model. Cosine ranges are sampled uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub n_tasks: usize,
    pub n_cases: usize,
    pub n_skills: usize,
    pub useful_cases_per_task: usize,
    pub traps_per_task: usize,
    /// Skills per family; the first `useful_skills_per_family` are useful,
    /// the rest traps.
    pub skills_per_family: usize,
    pub useful_skills_per_family: usize,
    /// A task's useful cases include those planted for the other tasks of
    /// its family.
    pub share_family_cases: bool,
    pub p_hi: f64,
    pub p_base: f64,
    pub p_lo: f64,
    pub max_retries: u32,
    /// Cosine of each task to its skill family's centre.
    pub task_family_cos: f64,
    pub useful_case_cos: [f64; 2],
    pub trap_case_cos: [f64; 2],
    /// Cosines of family skills to the family centre.
    pub useful_skill_cos: [f64; 2],
    pub trap_skill_cos: [f64; 2],
    /// Prior utility of planted skills.
    pub skill_utility: f64,
    pub max_construction_attempts: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_tasks: 20,
            n_cases: 60,
            n_skills: 20,
            useful_cases_per_task: 1,
            traps_per_task: 1,
            skills_per_family: 4,
            useful_skills_per_family: 2,
            share_family_cases: true,
            p_hi: 0.95,
            p_base: 0.5,
            p_lo: 0.05,
            max_retries: 3,
            task_family_cos: 0.9,
            useful_case_cos: [0.3, 0.55],
            trap_case_cos: [0.8, 0.9],
            useful_skill_cos: [0.5, 0.6],
            trap_skill_cos: [0.85, 0.95],
            skill_utility: 0.75,
            max_construction_attempts: 100,
        }
    }
}

impl WorldConfig {
    pub fn n_families(&self) -> usize {
        self.n_skills / self.skills_per_family.max(1)
    }

    fn planted_cases(&self) -> usize {
        self.n_tasks * (self.useful_cases_per_task + self.traps_per_task)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Construction(m));
        if self.n_tasks == 0 {
            return fail("need at least one task".into());
        }
        let u = self.useful_skills_per_family;
        if u == 0 || u >= self.skills_per_family || self.n_skills < self.skills_per_family {
            return fail(format!(
                "need at least one family with useful and trap skills (got {} skills, {} per family, {u} useful)",
                self.n_skills, self.skills_per_family
            ));
        }
        let planted = self.planted_cases();
        if self.n_cases < planted {
            return fail(format!("{} cases cannot hold {planted} planted cases", self.n_cases));
        }
        if self.traps_per_task == 0 || self.useful_cases_per_task == 0 {
            return fail("every task needs a useful case and a trap case".into());
        }
        let probs = [self.p_hi, self.p_base, self.p_lo, self.skill_utility];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("probabilities must lie in [0, 1]".into());
        }
        if !(self.p_hi > self.p_base && self.p_base > self.p_lo) {
            return fail(format!("need p_hi > p_base > p_lo, got {} {} {}", self.p_hi, self.p_base, self.p_lo));
        }
        let ranges = [self.useful_case_cos, self.trap_case_cos, self.useful_skill_cos, self.trap_skill_cos];
        let cos_ok = |c: f64| (-1.0..=1.0).contains(&c);
        if ranges.iter().any(|r| !(cos_ok(r[0]) && cos_ok(r[1]) && r[0] <= r[1])) || !cos_ok(self.task_family_cos) {
            return fail("cosine ranges must be ordered and inside [-1, 1]".into());
        }
        if self.max_construction_attempts == 0 {
            return fail("max_construction_attempts must be positive".into());
        }
        Ok(())
    }
}

/// A task and the memories planted for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub index_text: String,
    pub embedding: Embedding,
    pub useful_case_ids: BTreeSet<String>,
    pub useful_skill_ids: BTreeSet<String>,
    pub trap_case_ids: BTreeSet<String>,
    pub trap_skill_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticWorld {
    pub config: WorldConfig,
    pub tasks: Vec<Task>,
    pub cases: CaseStore,
    pub skills: SkillStore,
}

fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// A unit vector at cosine `c` to the unit vector `base`.
fn blend(base: &[f64], c: f64, rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut noise = random_unit(base.len(), rng);
        let along: f64 = noise.iter().zip(base).map(|(a, b)| a * b).sum();
        for (x, b) in noise.iter_mut().zip(base) {
            *x -= along * b;
        }
        let n = noise.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n < 1e-9 {
            continue;
        }
        let s = (1.0 - c * c).max(0.0).sqrt();
        return base.iter().zip(&noise).map(|(b, e)| c * b + s * e / n).collect();
    }
}

fn draw(range: [f64; 2], rng: &mut Rng) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..=range[1])
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn case(id: String, text: String, v: Vec<f64>) -> Result<CaseEntry> {
    Ok(CaseEntry {
        id,
        intent: text.clone(),
        index_text: text,
        embedding: Embedding::new(v)?,
        trajectory: Vec::new(),
        outcome: "ok".into(),
        success: true,
        created_episode: 0,
    })
}

/// Raw vectors of one construction attempt.
struct Draft {
    tasks: Vec<Vec<f64>>,
    useful_cases: Vec<Vec<Vec<f64>>>,
    trap_cases: Vec<Vec<Vec<f64>>>,
    fillers: Vec<Vec<f64>>,
    useful_skills: Vec<Vec<Vec<f64>>>,
    trap_skills: Vec<Vec<Vec<f64>>>,
}

impl Draft {
    fn sample(cfg: &WorldConfig, dim: usize, rng: &mut Rng) -> Self {
        let families = cfg.n_families();
        let centres: Vec<Vec<f64>> = (0..families).map(|_| random_unit(dim, rng)).collect();
        let u = cfg.useful_skills_per_family;
        let useful_skills = centres
            .iter()
            .map(|c| (0..u).map(|_| blend(c, draw(cfg.useful_skill_cos, rng), rng)).collect())
            .collect();
        let trap_skills = centres
            .iter()
            .map(|c| (u..cfg.skills_per_family).map(|_| blend(c, draw(cfg.trap_skill_cos, rng), rng)).collect())
            .collect();
        let mut tasks = Vec::with_capacity(cfg.n_tasks);
        let mut useful_cases = Vec::with_capacity(cfg.n_tasks);
        let mut trap_cases = Vec::with_capacity(cfg.n_tasks);
        for i in 0..cfg.n_tasks {
            let task = blend(&centres[i % families], cfg.task_family_cos, rng);
            useful_cases.push(
                (0..cfg.useful_cases_per_task)
                    .map(|_| blend(&task, draw(cfg.useful_case_cos, rng), rng))
                    .collect(),
            );
            trap_cases.push((0..cfg.traps_per_task).map(|_| blend(&task, draw(cfg.trap_case_cos, rng), rng)).collect());
            tasks.push(task);
        }
        let n_fillers = cfg.n_cases - cfg.planted_cases();
        let fillers = (0..n_fillers).map(|_| random_unit(dim, rng)).collect();
        Self {
            tasks,
            useful_cases,
            trap_cases,
            fillers,
            useful_skills,
            trap_skills,
        }
    }

    /// Every trap must be at least as close to its task as the median
    /// useful memory of that task.
    fn traps_hold(&self, cfg: &WorldConfig) -> Result<bool> {
        let families = cfg.n_families();
        for (i, task) in self.tasks.iter().enumerate() {
            let t = Embedding::new(task.clone())?;
            let cos = |v: &Vec<f64>| -> Result<f64> { cosine(&t, &Embedding::new(v.clone())?) };
            let f = i % families;
            let useful_cases: Vec<&Vec<f64>> = if cfg.share_family_cases {
                (f..self.tasks.len()).step_by(families).flat_map(|j| &self.useful_cases[j]).collect()
            } else {
                self.useful_cases[i].iter().collect()
            };
            let mut useful = useful_cases
                .into_iter()
                .chain(&self.useful_skills[f])
                .map(cos)
                .collect::<Result<Vec<_>>>()?;
            let bar = median(&mut useful);
            for trap in self.trap_cases[i].iter().chain(&self.trap_skills[i % families]) {
                if cos(trap)? < bar {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

pub fn task_id(i: usize) -> String {
    format!("task-{i:03}")
}

impl SyntheticWorld {
    /// Deterministic in `(cfg, dim, rng state)`.
    pub fn build(cfg: &WorldConfig, dim: usize, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        if dim < 2 {
            return Err(Error::Construction(format!("embedding dimension {dim} below 2")));
        }
        let families = cfg.n_families();
        let mut draft = None;
        for _ in 0..cfg.max_construction_attempts {
            let d = Draft::sample(cfg, dim, rng);
            if d.traps_hold(cfg)? {
                draft = Some(d);
                break;
            }
        }
        let d = draft.ok_or_else(|| {
            Error::Construction(format!("trap invariant failed after {} attempts", cfg.max_construction_attempts))
        })?;

        let mut cases = CaseStore::new(dim);
        let mut next_case = 0usize;
        let mut case_id = || {
            next_case += 1;
            format!("case-{:04}", next_case - 1)
        };
        let mut tasks = Vec::with_capacity(cfg.n_tasks);
        for (i, v) in d.tasks.iter().enumerate() {
            let id = task_id(i);
            let mut useful = BTreeSet::new();
            for v in &d.useful_cases[i] {
                let uid = case_id();
                cases.add_case(case(uid.clone(), format!("{id} worked example"), v.clone())?)?;
                useful.insert(uid);
            }
            let mut traps = BTreeSet::new();
            for trap in &d.trap_cases[i] {
                let tid = case_id();
                cases.add_case(case(tid.clone(), format!("{id} look-alike"), trap.clone())?)?;
                traps.insert(tid);
            }
            let family = i % families;
            let spf = cfg.skills_per_family;
            let u = cfg.useful_skills_per_family;
            tasks.push(Task {
                index_text: format!("{id} family {family}"),
                task_id: id,
                embedding: Embedding::new(v.clone())?,
                useful_case_ids: useful,
                useful_skill_ids: (0..u).map(|j| format!("skill-{:03}", spf * family + j)).collect(),
                trap_case_ids: traps,
                trap_skill_ids: (u..spf).map(|j| format!("skill-{:03}", spf * family + j)).collect(),
            });
        }
        if cfg.share_family_cases {
            for f in 0..families {
                let pooled: BTreeSet<String> = tasks
                    .iter()
                    .skip(f)
                    .step_by(families)
                    .flat_map(|t| t.useful_case_ids.iter().cloned())
                    .collect();
                for t in tasks.iter_mut().skip(f).step_by(families) {
                    t.useful_case_ids = pooled.clone();
                }
            }
        }
        for v in &d.fillers {
            let id = case_id();
            cases.add_case(case(id.clone(), format!("{id} unrelated"), v.clone())?)?;
        }

        let mut skills = SkillStore::new(dim);
        for f in 0..families {
            for (j, v) in d.useful_skills[f].iter().chain(&d.trap_skills[f]).enumerate() {
                let id = format!("skill-{:03}", cfg.skills_per_family * f + j);
                let mut s = SkillEntry::new(id.clone(), format!("{id} family {f}"), Embedding::new(v.clone())?, cfg.skill_utility);
                s.script = format!("op_{f}_{j}()");
                skills.register(s)?;
            }
        }
        // Skills left over after the last full family belong to none.
        for n in families * cfg.skills_per_family..cfg.n_skills {
            let id = format!("skill-{n:03}");
            skills.register(SkillEntry::new(id.clone(), id, Embedding::new(random_unit(dim, rng))?, cfg.skill_utility))?;
        }

        Ok(Self {
            config: cfg.clone(),
            tasks,
            cases,
            skills,
        })
    }

    /// Per-attempt success probability.
    pub fn success_probability(&self, case_hit: bool, skill_hit: bool) -> f64 {
        match (case_hit, skill_hit) {
            (true, true) => self.config.p_hi,
            (false, false) => self.config.p_lo,
            _ => self.config.p_base,
        }
    }
}
