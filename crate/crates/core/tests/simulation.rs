//! End-to-end simulator properties: seeded replay, the no-write contract of
//! semantic mode, outcome-log invariants and the learning trend on the
//! useful case.

use memloop::case_memory::RetrievalMode;
use memloop::sim::{run_experiment, ExperimentConfig, Phase, Simulation};

fn small() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.world.n_tasks = 6;
    cfg.world.n_cases = 24;
    cfg.world.n_skills = 8;
    cfg.hyper.dim = 16;
    cfg.hyper.hidden = vec![32, 16];
    cfg
}

fn dir_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

/// Policy mass on the useful cases of task `ti` under the current policy.
fn useful_mass(sim: &Simulation, ti: usize) -> f64 {
    let task = &sim.world.tasks[ti];
    let r = sim.policy.retrieve(&sim.world.cases, &task.embedding, &sim.config.hyper, sim.mode).unwrap();
    r.scored
        .iter()
        .zip(&r.probs)
        .filter(|(c, _)| task.useful_case_ids.contains(&c.case_id))
        .map(|(_, p)| p)
        .sum()
}

#[test]
fn learned_replay_is_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let mut sim = Simulation::new(small(), RetrievalMode::Learned, 11).unwrap();
        sim.run(60, Phase::Train).unwrap();
        sim.run(20, Phase::Eval).unwrap();
        sim.save(d.path()).unwrap();
    }
    assert_eq!(dir_bytes(a.path()), dir_bytes(b.path()));
}

#[test]
fn seeds_give_different_runs() {
    let a = run_experiment(&small(), 30, RetrievalMode::Learned, 1).unwrap();
    let b = run_experiment(&small(), 30, RetrievalMode::Learned, 2).unwrap();
    assert_ne!(a.outcomes, b.outcomes);
}

#[test]
fn semantic_mode_writes_nothing() {
    let fresh = Simulation::new(small(), RetrievalMode::Semantic, 4).unwrap();
    let mut sim = fresh.clone();
    sim.run(50, Phase::Train).unwrap();
    assert_eq!(sim.policy.net, fresh.policy.net);
    assert_eq!(sim.policy.t, 0);
    for (x, y) in sim.world.skills.entries().iter().zip(fresh.world.skills.entries()) {
        assert_eq!(x.utility.to_bits(), y.utility.to_bits());
    }
}

#[test]
fn outcome_log_invariants() {
    let sim = run_experiment(&small(), 120, RetrievalMode::Learned, 9).unwrap();
    for (i, o) in sim.outcomes.iter().enumerate() {
        assert_eq!(o.episode, i as u64);
        assert_eq!(o.task_id, sim.world.tasks[i % 6].task_id);
        assert_eq!(o.first_attempt_success, o.retries == 0 && o.success());
        assert_eq!(o.attempts.len() as u32, o.retries + 1);
        assert!(o.retries <= sim.world.config.max_retries);
        assert!(o.attempts[..o.attempts.len() - 1].iter().all(|a| a.reward == 0));
        assert_eq!(o.attempts.last().unwrap().reward, o.reward);
        assert_eq!(o.called_skill_ids.len(), o.attempts.len());
        assert!(o.selected_case_ids.len() <= sim.config.hyper.k);
    }
    assert_eq!(sim.policy.t, 120);
}

/// With deterministic rewards and a single useful case per task, the
/// policy's mass on that case rises from window to window.
#[test]
fn useful_case_probability_trends_up() {
    let mut cfg = ExperimentConfig::default();
    cfg.world.p_hi = 1.0;
    cfg.world.p_lo = 0.0;
    cfg.world.share_family_cases = false;
    let seeds = [1u64, 2, 3, 4, 5];
    let mut curve = vec![0.0; 8];
    for &seed in &seeds {
        let mut sim = Simulation::new(cfg.clone(), RetrievalMode::Learned, seed).unwrap();
        let n_tasks = sim.world.tasks.len();
        for (w, slot) in curve.iter_mut().enumerate() {
            for e in 0..100 {
                let ti = (w * 100 + e) % n_tasks;
                *slot += useful_mass(&sim, ti) / (100 * seeds.len()) as f64;
                sim.run_episode(ti, Phase::Train).unwrap();
            }
        }
    }
    eprintln!("mean useful-case mass per 100-episode window: {curve:.4?}");
    for w in curve.windows(2) {
        assert!(w[1] >= w[0], "{curve:?}");
    }
}
