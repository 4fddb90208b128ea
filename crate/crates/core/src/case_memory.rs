//! The case library and its learned retrieval policy.
//!
//! Retrieval runs in stages: exact cosine recall of the top-K0 successful
//! cases, value-network scoring of each (state, case) pair, min-max
//! normalization of both score families within the candidate set, a fused
//! score whose semantic weight anneals linearly with the episode counter, and
//! a temperature softmax sampled without replacement with ε-exploration.

use std::collections::{BTreeSet, HashMap};
use std::io::Write as _;
use std::path::Path;

use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::hyper::HyperParams;
use crate::rng::Rng;
use crate::value_net::{build_features, Adam, EntropyPathway, Features, Loss, Mode, PolicyEntropy, Sample, ValueNet};

/// One recorded tool invocation of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub step: u32,
    pub payload: String,
}

/// ⟨intent, trajectory, outcome⟩ plus its retrieval index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub id: String,
    /// Query text concatenated with the structured requirement.
    pub index_text: String,
    pub embedding: Embedding,
    pub intent: String,
    pub trajectory: Vec<ToolCall>,
    pub outcome: String,
    pub success: bool,
    pub created_episode: u64,
}

/// The retrieval-time state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateQuery {
    pub query_text: String,
    pub embedding: Embedding,
    pub episode_t: u64,
    pub masked_skill_ids: BTreeSet<String>,
}

impl StateQuery {
    pub fn new(query_text: impl Into<String>, embedding: Embedding) -> Self {
        Self {
            query_text: query_text.into(),
            embedding,
            episode_t: 0,
            masked_skill_ids: BTreeSet::new(),
        }
    }
}

/// Insertion-ordered case store. Failed cases are kept for audit but never
/// recalled.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CaseStore {
    dim: usize,
    entries: Vec<CaseEntry>,
    by_id: HashMap<String, usize>,
}

/// A recalled case and its cosine to the state.
#[derive(Debug, Clone, Copy)]
pub struct Recalled<'a> {
    pub entry: &'a CaseEntry,
    pub s_sem: f64,
}

impl CaseStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ..Self::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CaseEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&CaseEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    /// Store an entry; returns the new revision (the entry count).
    pub fn add_case(&mut self, entry: CaseEntry) -> Result<u64> {
        entry.embedding.expect_dim(self.dim)?;
        if self.by_id.contains_key(&entry.id) {
            return Err(Error::Conflict(format!("case {:?} already exists", entry.id)));
        }
        self.by_id.insert(entry.id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(self.entries.len() as u64)
    }

    /// Top-`k0` successful cases by cosine, descending, ties by id.
    pub fn recall(&self, state: &Embedding, k0: usize) -> Result<Vec<Recalled<'_>>> {
        state.expect_dim(self.dim)?;
        let mut hits = self
            .entries
            .iter()
            .filter(|e| e.success)
            .map(|entry| Ok(Recalled { entry, s_sem: cosine(state, &entry.embedding)? }))
            .collect::<Result<Vec<_>>>()?;
        hits.sort_by(|a, b| b.s_sem.total_cmp(&a.s_sem).then_with(|| a.entry.id.cmp(&b.entry.id)));
        hits.truncate(k0);
        Ok(hits)
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), &self.entries)
    }

    /// Append one entry to a JSONL store file.
    pub fn append_jsonl(path: impl AsRef<Path>, entry: &CaseEntry) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(entry)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))
    }

    /// Rebuild a store from JSONL in insertion order. The dimension comes
    /// from the first entry.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let entries: Vec<CaseEntry> = read_jsonl(path.as_ref())?;
        let dim = entries.first().map_or(0, |e| e.embedding.dim());
        let mut store = CaseStore::new(dim);
        for (i, e) in entries.into_iter().enumerate() {
            store
                .add_case(e)
                .map_err(|err| Error::parse(path.as_ref(), i + 1, err.to_string()))?;
        }
        Ok(store)
    }
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

/// Linearly annealed semantic weight: `α_start → α_end` over `t_decay` episodes.
pub fn anneal_alpha(t: u64, hp: &HyperParams) -> f64 {
    let progress = if hp.t_decay == 0 {
        1.0
    } else {
        (t as f64 / hp.t_decay as f64).min(1.0)
    };
    hp.alpha_start + (hp.alpha_end - hp.alpha_start) * progress
}

/// Min-max normalize within the slice; a constant slice maps to 0.5.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = min_max(values);
    if hi > lo {
        values.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; values.len()]
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub case_id: String,
    pub s_sem: f64,
    pub s_val: f64,
    pub s_sem_norm: f64,
    pub s_val_norm: f64,
    pub fused: f64,
}

/// Fuse raw semantic and value scores of a candidate set.
pub fn fuse_scores(ids: &[&str], s_sem: &[f64], s_val: &[f64], alpha: f64) -> Vec<ScoredCandidate> {
    let sem_norm = min_max_normalize(s_sem);
    let val_norm = min_max_normalize(s_val);
    ids.iter()
        .enumerate()
        .map(|(i, id)| ScoredCandidate {
            case_id: (*id).to_string(),
            s_sem: s_sem[i],
            s_val: s_val[i],
            s_sem_norm: sem_norm[i],
            s_val_norm: val_norm[i],
            fused: alpha * sem_norm[i] + (1.0 - alpha) * val_norm[i],
        })
        .collect()
}

/// Score recalled candidates. Without a network every value score is the
/// neutral 0.5, which normalizes to the degenerate constant.
pub fn score_candidates(
    state: &Embedding,
    candidates: &[Recalled<'_>],
    alpha: f64,
    net: Option<&ValueNet>,
) -> Result<Vec<ScoredCandidate>> {
    let ids: Vec<&str> = candidates.iter().map(|c| c.entry.id.as_str()).collect();
    let sem: Vec<f64> = candidates.iter().map(|c| c.s_sem).collect();
    let val = match net {
        Some(net) => {
            let feats = candidates
                .iter()
                .map(|c| build_features(state, &c.entry.embedding))
                .collect::<Result<Vec<_>>>()?;
            net.score_batch(&feats.iter().collect::<Vec<_>>())?
        }
        None => vec![0.5; candidates.len()],
    };
    Ok(fuse_scores(&ids, &sem, &val, alpha))
}

/// Softmax of fused scores at temperature `tau`.
pub fn policy_distribution(scored: &[ScoredCandidate], tau: f64) -> Vec<f64> {
    let fused: Vec<f64> = scored.iter().map(|c| c.fused).collect();
    crate::value_net::softmax(&fused, tau)
}

/// Draw up to `k` distinct candidate indices. Each slot explores uniformly
/// with probability `epsilon`, otherwise samples the renormalized
/// distribution over the candidates not yet taken.
pub fn select_cases(probs: &[f64], k: usize, epsilon: f64, rng: &mut Rng) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..probs.len()).collect();
    let mut picked = Vec::with_capacity(k.min(probs.len()));
    while picked.len() < k && !remaining.is_empty() {
        let explore = rng.gen::<f64>() < epsilon;
        let slot = if explore {
            rng.gen_range(0..remaining.len())
        } else {
            let total: f64 = remaining.iter().map(|&i| probs[i]).sum();
            if total > 0.0 {
                let mut u = rng.gen::<f64>() * total;
                let mut chosen = remaining.len() - 1;
                for (slot, &i) in remaining.iter().enumerate() {
                    if u < probs[i] {
                        chosen = slot;
                        break;
                    }
                    u -= probs[i];
                }
                chosen
            } else {
                rng.gen_range(0..remaining.len())
            }
        };
        picked.push(remaining.remove(slot));
    }
    picked
}

/// Labelled candidate indices for one episode.
///
/// On success the selected cases are positives and up to `n_neg` negatives
/// are drawn uniformly from the `n_bottom` lowest-fused unselected
/// candidates. On failure the selected cases are the only samples, all
/// negative.
pub fn build_training_samples(
    selected: &[usize],
    scored: &[ScoredCandidate],
    success: bool,
    rng: &mut Rng,
    hp: &HyperParams,
) -> Vec<(usize, bool)> {
    if !success {
        return selected.iter().map(|&i| (i, false)).collect();
    }
    let mut samples: Vec<(usize, bool)> = selected.iter().map(|&i| (i, true)).collect();
    let pool = bottom_pool(selected, scored, hp.n_bottom);
    let n = hp.n_neg.min(pool.len());
    for j in index::sample(rng, pool.len(), n).into_iter() {
        samples.push((pool[j], false));
    }
    samples
}

/// The `n_bottom` unselected candidates with the lowest fused score,
/// ascending, ties by id.
pub fn bottom_pool(selected: &[usize], scored: &[ScoredCandidate], n_bottom: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..scored.len()).filter(|i| !selected.contains(i)).collect();
    pool.sort_by(|&a, &b| {
        scored[a]
            .fused
            .total_cmp(&scored[b].fused)
            .then_with(|| scored[a].case_id.cmp(&scored[b].case_id))
    });
    pool.truncate(n_bottom);
    pool
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RetrievalMode {
    /// Annealed fusion with the value network.
    Learned,
    /// Cosine only: α fixed at 1 and no value network.
    Semantic,
}

/// Everything one retrieval round produced, kept so the episode's training
/// update can reuse it.
#[derive(Debug, Clone)]
pub struct Retrieval {
    pub alpha: f64,
    pub scored: Vec<ScoredCandidate>,
    pub probs: Vec<f64>,
    state: Embedding,
    candidate_embeddings: Vec<Embedding>,
}

impl Retrieval {
    pub fn is_empty(&self) -> bool {
        self.scored.is_empty()
    }

    pub fn ids(&self, picked: &[usize]) -> Vec<String> {
        picked.iter().map(|&i| self.scored[i].case_id.clone()).collect()
    }
}

/// The learnable part of case retrieval: value network, its optimizer and
/// the annealing counter.
#[derive(Debug, Clone, PartialEq)]
pub struct CasePolicy {
    pub net: ValueNet,
    pub optimizer: Adam,
    /// Episode counter driving α annealing; advances once per update.
    pub t: u64,
}

impl CasePolicy {
    pub fn new(hp: &HyperParams, init_rng: &mut Rng) -> Result<Self> {
        let net = ValueNet::new(hp.dim, &hp.hidden, hp.p_drop, init_rng)?;
        Ok(Self::from_net(net, hp))
    }

    pub fn from_net(net: ValueNet, hp: &HyperParams) -> Self {
        let optimizer = Adam::new(hp.optimizer.clone(), net.num_params());
        Self { net, optimizer, t: 0 }
    }

    pub fn alpha(&self, hp: &HyperParams) -> f64 {
        anneal_alpha(self.t, hp)
    }

    pub fn retrieve(&self, store: &CaseStore, state: &Embedding, hp: &HyperParams, mode: RetrievalMode) -> Result<Retrieval> {
        let recalled = store.recall(state, hp.k0)?;
        let (alpha, net) = match mode {
            RetrievalMode::Learned => (self.alpha(hp), Some(&self.net)),
            RetrievalMode::Semantic => (1.0, None),
        };
        let scored = score_candidates(state, &recalled, alpha, net)?;
        let probs = if scored.is_empty() {
            Vec::new()
        } else {
            policy_distribution(&scored, hp.tau_c)
        };
        Ok(Retrieval {
            alpha,
            scored,
            probs,
            state: state.clone(),
            candidate_embeddings: recalled.iter().map(|r| r.entry.embedding.clone()).collect(),
        })
    }

    pub fn select(&self, retrieval: &Retrieval, hp: &HyperParams, rng: &mut Rng) -> Vec<usize> {
        select_cases(&retrieval.probs, hp.k, hp.epsilon, rng)
    }

    /// One online update from a finished episode.
    ///
    /// Builds the labelled samples, adds the entropy bonus of the episode's
    /// retrieval distribution and takes one optimizer step. The annealing
    /// counter advances exactly once even if the step fails.
    pub fn update(
        &mut self,
        retrieval: &Retrieval,
        selected: &[usize],
        success: bool,
        hp: &HyperParams,
        sample_rng: &mut Rng,
        dropout_rng: &mut Rng,
    ) -> Result<Option<Loss>> {
        let result = self.train_on(retrieval, selected, success, hp, sample_rng, dropout_rng);
        self.t += 1;
        result
    }

    fn train_on(
        &mut self,
        retrieval: &Retrieval,
        selected: &[usize],
        success: bool,
        hp: &HyperParams,
        sample_rng: &mut Rng,
        dropout_rng: &mut Rng,
    ) -> Result<Option<Loss>> {
        if retrieval.is_empty() || selected.iter().any(|&i| i >= retrieval.scored.len()) {
            return Ok(None);
        }
        let labelled = build_training_samples(selected, &retrieval.scored, success, sample_rng, hp);
        if labelled.is_empty() {
            return Ok(None);
        }
        let features: Vec<Features> = retrieval
            .candidate_embeddings
            .iter()
            .map(|e| build_features(&retrieval.state, e))
            .collect::<Result<_>>()?;
        let batch: Vec<Sample> = labelled
            .iter()
            .map(|&(i, label)| Sample {
                features: features[i].clone(),
                label,
            })
            .collect();
        let vals: Vec<f64> = retrieval.scored.iter().map(|c| c.s_val).collect();
        let (val_min, val_max) = min_max(&vals);
        let policy = PolicyEntropy {
            probs: retrieval.probs.clone(),
            pathway: Some(EntropyPathway {
                features,
                sem_norm: retrieval.scored.iter().map(|c| c.s_sem_norm).collect(),
                alpha: retrieval.alpha,
                tau: hp.tau_c,
                val_min,
                val_max,
            }),
        };
        let (loss, grads) = self
            .net
            .loss_and_grads(&batch, Some(&policy), hp.beta, Mode::Train(dropout_rng))?;
        self.optimizer.step(&mut self.net, &grads)?;
        Ok(Some(loss))
    }
}
