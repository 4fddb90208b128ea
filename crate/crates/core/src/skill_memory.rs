//! The skill library: utility-filtered retrieval, one-round masking of
//! skills that just failed, and EMA utility updates with freeze/delete
//! disposition.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::case_memory::{read_jsonl, write_jsonl, StateQuery};
use crate::embedding::{cosine, Embedding};
use crate::error::{Error, Result};
use crate::hyper::{Disposition, HyperParams};

/// A declared skill parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillParam {
    pub name: String,
    pub description: String,
    pub kind: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct SkillStats {
    pub n_uses: u64,
    pub n_success: u64,
    pub n_fail: u64,
    pub last_reward: Option<u8>,
    pub frozen: bool,
}

/// ⟨script, doc, params, constraints, utility, stats⟩ plus its index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillEntry {
    pub id: String,
    pub script: String,
    pub doc: String,
    pub params: Vec<SkillParam>,
    pub constraints: String,
    pub index_text: String,
    pub embedding: Embedding,
    pub utility: f64,
    pub stat: SkillStats,
}

impl SkillEntry {
    /// A fresh, unfrozen skill with the given prior utility.
    pub fn new(id: impl Into<String>, index_text: impl Into<String>, embedding: Embedding, utility: f64) -> Self {
        Self {
            id: id.into(),
            script: String::new(),
            doc: String::new(),
            params: Vec::new(),
            constraints: String::new(),
            index_text: index_text.into(),
            embedding,
            utility,
            stat: SkillStats::default(),
        }
    }
}

/// Utility before and after one update call, plus any disposition it caused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityChange {
    pub id: String,
    pub before: f64,
    pub after: f64,
    pub disposed: Option<Disposition>,
}

/// Outcome of [`SkillStore::update_utilities`]; unknown ids do not stop the
/// other updates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct UpdateReport {
    pub changes: Vec<UtilityChange>,
    pub unknown: Vec<String>,
}

impl UpdateReport {
    pub fn into_result(self) -> Result<Vec<UtilityChange>> {
        if self.unknown.is_empty() {
            Ok(self.changes)
        } else {
            Err(Error::NotFound(format!("unknown skills: {}", self.unknown.join(", "))))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SkillStore {
    dim: usize,
    entries: Vec<SkillEntry>,
    by_id: HashMap<String, usize>,
    /// Skills that failed this round and sit out the next one.
    pending_masks: BTreeSet<String>,
}

/// Bounded similarity `1 / (1 + (1 - cos))`, in [1/3, 1].
pub fn skill_similarity(state: &Embedding, skill: &Embedding) -> Result<f64> {
    Ok(1.0 / (2.0 - cosine(state, skill)?))
}

impl SkillStore {
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

    pub fn entries(&self) -> &[SkillEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&SkillEntry> {
        self.by_id.get(id).map(|&i| &self.entries[i])
    }

    pub fn register(&mut self, entry: SkillEntry) -> Result<u64> {
        entry.embedding.expect_dim(self.dim)?;
        if !(0.0..=1.0).contains(&entry.utility) {
            return Err(Error::invalid(format!("utility {} outside [0, 1]", entry.utility)));
        }
        let s = &entry.stat;
        if s.n_uses != s.n_success + s.n_fail {
            return Err(Error::invalid(format!("skill {:?}: n_uses != n_success + n_fail", entry.id)));
        }
        if self.by_id.contains_key(&entry.id) {
            return Err(Error::Conflict(format!("skill {:?} already exists", entry.id)));
        }
        self.by_id.insert(entry.id.clone(), self.entries.len());
        self.entries.push(entry);
        Ok(self.entries.len() as u64)
    }

    /// Skills eligible for recall: utility at least `u_min`, not frozen and
    /// not masked.
    pub fn eligible(&self, masked: &BTreeSet<String>, hp: &HyperParams) -> Vec<&SkillEntry> {
        self.entries
            .iter()
            .filter(|s| s.utility >= hp.u_min && !s.stat.frozen && !masked.contains(&s.id))
            .collect()
    }

    /// Exclude `id` from the next retrieval round only.
    pub fn mask_failed(&mut self, id: &str) -> Result<()> {
        if !self.by_id.contains_key(id) {
            return Err(Error::NotFound(format!("skill {id:?}")));
        }
        self.pending_masks.insert(id.to_string());
        Ok(())
    }

    /// Start a retrieval round: hands out the masks set since the previous
    /// round and clears them, so each mask lives for exactly one round.
    pub fn take_masks(&mut self) -> BTreeSet<String> {
        std::mem::take(&mut self.pending_masks)
    }

    pub fn clear_masks(&mut self) {
        self.pending_masks.clear();
    }

    pub fn pending_masks(&self) -> &BTreeSet<String> {
        &self.pending_masks
    }

    /// Eligible skills → top `k_skill_recall` by bounded similarity → fused
    /// with utility → top `k_skill`. Ties break by id.
    pub fn rank(&self, state: &StateQuery, hp: &HyperParams) -> Result<Vec<(&SkillEntry, f64)>> {
        state.embedding.expect_dim(self.dim)?;
        let mut recalled = self
            .eligible(&state.masked_skill_ids, hp)
            .into_iter()
            .map(|s| Ok((s, skill_similarity(&state.embedding, &s.embedding)?)))
            .collect::<Result<Vec<_>>>()?;
        recalled.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
        recalled.truncate(hp.k_skill_recall);
        let mut fused: Vec<(&SkillEntry, f64)> = recalled
            .into_iter()
            .map(|(s, sim)| (s, hp.lambda_sem * sim + hp.lambda_u * s.utility))
            .collect();
        fused.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
        fused.truncate(hp.k_skill);
        Ok(fused)
    }

    /// Apply `U ← U + η(r − U)` and the usage statistics once per entry of
    /// `called` (repeats count), then dispose of any touched skill whose
    /// utility fell below `u_prune` after at least `n_min` uses.
    pub fn update_utilities(&mut self, called: &[String], success: bool, hp: &HyperParams) -> UpdateReport {
        let r = if success { 1.0 } else { 0.0 };
        let mut report = UpdateReport::default();
        let mut touched: Vec<usize> = Vec::new();
        for id in called {
            let Some(&i) = self.by_id.get(id) else {
                report.unknown.push(id.clone());
                continue;
            };
            let skill = &mut self.entries[i];
            let before = skill.utility;
            skill.utility = (before + hp.eta * (r - before)).clamp(0.0, 1.0);
            skill.stat.n_uses += 1;
            if success {
                skill.stat.n_success += 1;
            } else {
                skill.stat.n_fail += 1;
            }
            skill.stat.last_reward = Some(success as u8);
            report.changes.push(UtilityChange {
                id: id.clone(),
                before,
                after: skill.utility,
                disposed: None,
            });
            if !touched.contains(&i) {
                touched.push(i);
            }
        }

        let mut doomed = Vec::new();
        for &i in &touched {
            let skill = &mut self.entries[i];
            if skill.stat.frozen || skill.utility >= hp.u_prune || skill.stat.n_uses < hp.n_min {
                continue;
            }
            match hp.disposition {
                Disposition::Freeze => skill.stat.frozen = true,
                Disposition::Delete => doomed.push(skill.id.clone()),
            }
            let id = skill.id.clone();
            if let Some(c) = report.changes.iter_mut().rev().find(|c| c.id == id) {
                c.disposed = Some(hp.disposition);
            }
        }
        for id in doomed {
            self.remove(&id);
        }
        report
    }

    fn remove(&mut self, id: &str) {
        if let Some(i) = self.by_id.remove(id) {
            self.entries.remove(i);
            self.pending_masks.remove(id);
            for (j, e) in self.entries.iter().enumerate().skip(i) {
                self.by_id.insert(e.id.clone(), j);
            }
        }
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), &self.entries)
    }

    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self> {
        let entries: Vec<SkillEntry> = read_jsonl(path.as_ref())?;
        let dim = entries.first().map_or(0, |e| e.embedding.dim());
        let mut store = SkillStore::new(dim);
        for (i, e) in entries.into_iter().enumerate() {
            store
                .register(e)
                .map_err(|err| Error::parse(path.as_ref(), i + 1, err.to_string()))?;
        }
        Ok(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    /// A unit vector in the plane with the given cosine to (1, 0).
    fn at_cos(c: f64) -> Embedding {
        e(&[c, (1.0 - c * c).max(0.0).sqrt()])
    }

    fn skill(id: &str, cos: f64, u: f64) -> SkillEntry {
        SkillEntry::new(id, id, at_cos(cos), u)
    }

    fn query() -> StateQuery {
        StateQuery::new("q", e(&[1.0, 0.0]))
    }

    fn ids(ranked: &[(&SkillEntry, f64)]) -> Vec<String> {
        ranked.iter().map(|(s, _)| s.id.clone()).collect()
    }

    #[test]
    fn eligibility_threshold_is_inclusive() {
        let hp = HyperParams::default();
        let mut store = SkillStore::new(2);
        store.register(skill("half", 0.5, 0.5)).unwrap();
        store.register(skill("low", 0.5, 0.4)).unwrap();
        let mut frozen = skill("frozen", 1.0, 0.9);
        frozen.stat.frozen = true;
        store.register(frozen).unwrap();
        let none = BTreeSet::new();
        let got: Vec<_> = store.eligible(&none, &hp).into_iter().map(|s| s.id.as_str()).collect();
        assert_eq!(got, vec!["half"]);
        assert!(ids(&store.rank(&query(), &hp).unwrap()).iter().all(|id| id != "frozen"));
    }

    #[test]
    fn duplicate_registration_conflicts() {
        let mut store = SkillStore::new(2);
        store.register(skill("a", 0.5, 0.5)).unwrap();
        assert!(matches!(store.register(skill("a", 0.5, 0.5)), Err(Error::Conflict(_))));
    }

    #[test]
    fn bounded_similarity() {
        let q = e(&[1.0, 0.0]);
        assert_eq!(skill_similarity(&q, &e(&[1.0, 0.0])).unwrap(), 1.0);
        assert_eq!(skill_similarity(&q, &e(&[0.0, 1.0])).unwrap(), 0.5);
        assert_eq!(skill_similarity(&q, &e(&[-1.0, 0.0])).unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn fused_score_and_ties() {
        let hp = HyperParams::default();
        let mut store = SkillStore::new(2);
        store.register(skill("only", 1.0, 0.5)).unwrap();
        let ranked = store.rank(&query(), &hp).unwrap();
        assert!((ranked[0].1 - 0.85).abs() < 1e-12);

        // Equal fused scores: 0.7*0.9 + 0.3*0.2 = 0.7*0.6 + 0.3*0.9 = 0.69.
        let s_sem_to_cos = |s: f64| 2.0 - 1.0 / s;
        let hp = HyperParams { u_min: 0.0, ..hp };
        let mut store = SkillStore::new(2);
        store.register(skill("b", s_sem_to_cos(0.9), 0.2)).unwrap();
        store.register(skill("a", s_sem_to_cos(0.6), 0.9)).unwrap();
        let ranked = store.rank(&query(), &hp).unwrap();
        assert!((ranked[0].1 - 0.69).abs() < 1e-9 && (ranked[1].1 - 0.69).abs() < 1e-9);
        if (ranked[0].1 - ranked[1].1).abs() == 0.0 {
            assert_eq!(ids(&ranked), vec!["a", "b"]);
        }
    }

    #[test]
    fn exact_ties_break_by_id() {
        let hp = HyperParams::default();
        let mut store = SkillStore::new(2);
        for id in ["c", "a", "b"] {
            store.register(skill(id, 0.3, 0.7)).unwrap();
        }
        assert_eq!(ids(&store.rank(&query(), &hp).unwrap()), vec!["a", "b", "c"]);
    }

    #[test]
    fn singleton_is_returned_regardless_of_utility_weight() {
        let hp = HyperParams::default();
        let mut store = SkillStore::new(2);
        store.register(skill("x", -0.9, 0.5)).unwrap();
        assert_eq!(ids(&store.rank(&query(), &hp).unwrap()), vec!["x"]);
        assert!(SkillStore::new(2).rank(&query(), &hp).unwrap().is_empty());
    }

    #[test]
    fn mask_lasts_exactly_one_round() {
        let hp = HyperParams::default();
        let mut store = SkillStore::new(2);
        store.register(skill("s", 0.9, 0.9)).unwrap();
        store.register(skill("t", 0.1, 0.9)).unwrap();

        let round = |store: &mut SkillStore| {
            let mut q = query();
            q.masked_skill_ids = store.take_masks();
            ids(&store.rank(&q, &hp).unwrap())
        };
        assert!(round(&mut store).contains(&"s".to_string()));
        store.mask_failed("s").unwrap();
        assert!(!round(&mut store).contains(&"s".to_string()));
        assert!(round(&mut store).contains(&"s".to_string()));

        store.mask_failed("s").unwrap();
        store.clear_masks();
        assert!(round(&mut store).contains(&"s".to_string()));
        assert!(matches!(store.mask_failed("nope"), Err(Error::NotFound(_))));
    }

    #[test]
    fn ema_reference_values() {
        let hp = HyperParams::default();
        let mut store = SkillStore::new(2);
        store.register(skill("a", 0.5, 0.5)).unwrap();
        store.register(skill("b", 0.5, 0.8)).unwrap();
        let up = store.update_utilities(&["a".into()], true, &hp).into_result().unwrap();
        assert!((up[0].after - 0.55).abs() < 1e-15);
        let down = store.update_utilities(&["b".into()], false, &hp).into_result().unwrap();
        assert!((down[0].after - 0.72).abs() < 1e-15);
        let s = &store.get("b").unwrap().stat;
        assert_eq!((s.n_uses, s.n_success, s.n_fail, s.last_reward), (1, 0, 1, Some(0)));
    }

    #[test]
    fn freeze_fires_at_n_min() {
        let hp = HyperParams::default();
        let mut store = SkillStore::new(2);
        store.register(skill("a", 0.5, 0.5)).unwrap();
        for n in 1..=20u64 {
            let ch = store.update_utilities(&["a".into()], false, &hp).into_result().unwrap();
            let expected = 0.5 * 0.9f64.powi(n as i32);
            assert!((ch[0].after - expected).abs() < 1e-12);
            let s = store.get("a").unwrap();
            assert_eq!(s.stat.frozen, n >= 5, "n = {n}");
            assert_eq!(ch[0].disposed.is_some(), n == 5);
        }
        // Frozen skills keep their record for audit.
        assert_eq!(store.get("a").unwrap().stat.n_uses, 20);
    }

    #[test]
    fn delete_policy_removes_entry() {
        let hp = HyperParams {
            disposition: Disposition::Delete,
            ..HyperParams::default()
        };
        let mut store = SkillStore::new(2);
        store.register(skill("a", 0.5, 0.5)).unwrap();
        store.register(skill("b", 0.5, 0.9)).unwrap();
        for _ in 0..5 {
            store.update_utilities(&["a".into()], false, &hp).into_result().unwrap();
        }
        assert!(store.get("a").is_none());
        assert_eq!(store.get("b").unwrap().id, "b");
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn unknown_ids_are_reported_after_other_updates() {
        let hp = HyperParams::default();
        let mut store = SkillStore::new(2);
        store.register(skill("a", 0.5, 0.5)).unwrap();
        let report = store.update_utilities(&["a".into(), "ghost".into(), "a".into()], true, &hp);
        assert_eq!(report.changes.len(), 2);
        assert_eq!(report.unknown, vec!["ghost".to_string()]);
        assert!(matches!(report.into_result(), Err(Error::NotFound(_))));
        assert_eq!(store.get("a").unwrap().stat.n_uses, 2);
    }

    #[test]
    fn jsonl_round_trip_keeps_frozen_entries() {
        let hp = HyperParams::default();
        let mut store = SkillStore::new(2);
        store.register(skill("a", 0.5, 0.5)).unwrap();
        store.register(skill("b", 0.2, 0.7)).unwrap();
        for _ in 0..6 {
            store.update_utilities(&["a".into()], false, &hp);
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("skills.jsonl");
        store.save_jsonl(&path).unwrap();
        let back = SkillStore::load_jsonl(&path).unwrap();
        assert_eq!(back.entries(), store.entries());
        assert!(back.get("a").unwrap().stat.frozen);
    }

    proptest! {
        #[test]
        fn utility_stays_in_unit_interval(u0 in 0.0f64..=1.0, eta in 0.001f64..=1.0, rewards in prop::collection::vec(any::<bool>(), 1..60)) {
            let hp = HyperParams { eta, n_min: u64::MAX, ..HyperParams::default() };
            let mut store = SkillStore::new(2);
            store.register(skill("a", 0.5, u0)).unwrap();
            for r in rewards {
                store.update_utilities(&["a".into()], r, &hp);
                let s = store.get("a").unwrap();
                prop_assert!((0.0..=1.0).contains(&s.utility));
                prop_assert_eq!(s.stat.n_uses, s.stat.n_success + s.stat.n_fail);
            }
        }

        #[test]
        fn masked_and_frozen_never_ranked(n in 1usize..12, mask_bits in any::<u16>(), frozen_bits in any::<u16>()) {
            let hp = HyperParams { k_skill: 12, k_skill_recall: 12, ..HyperParams::default() };
            let mut store = SkillStore::new(2);
            for i in 0..n {
                let mut s = skill(&format!("s{i}"), (i as f64 / 12.0) * 2.0 - 1.0, 0.6);
                s.stat.frozen = frozen_bits >> i & 1 == 1;
                store.register(s).unwrap();
            }
            let mut q = query();
            q.masked_skill_ids = (0..n).filter(|i| mask_bits >> i & 1 == 1).map(|i| format!("s{i}")).collect();
            for (s, _) in store.rank(&q, &hp).unwrap() {
                prop_assert!(!s.stat.frozen);
                prop_assert!(!q.masked_skill_ids.contains(&s.id));
            }
        }
    }
}
