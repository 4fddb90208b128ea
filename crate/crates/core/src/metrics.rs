//! Process metrics over episode logs: SUC, Pass@1 and AVG Re.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::EpisodeOutcome;

/// Rates for one group of episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n_samples: usize,
    pub suc: f64,
    pub pass_at_1: f64,
    /// Mean retries among successful episodes; `None` when there were none.
    pub avg_re: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_samples: usize,
    pub suc: f64,
    pub pass_at_1: f64,
    pub avg_re: Option<f64>,
    /// Present when every outcome came from the same world.
    pub world_id: Option<String>,
    pub by_mode: BTreeMap<String, Summary>,
}

fn summarize<'a>(outcomes: impl Iterator<Item = &'a EpisodeOutcome>) -> Summary {
    let (mut n, mut wins, mut first, mut retries) = (0usize, 0usize, 0usize, 0u64);
    for o in outcomes {
        n += 1;
        if o.success() {
            wins += 1;
            retries += u64::from(o.retries);
        }
        first += o.first_attempt_success as usize;
    }
    Summary {
        n_samples: n,
        suc: wins as f64 / n as f64,
        pass_at_1: first as f64 / n as f64,
        avg_re: (wins > 0).then(|| retries as f64 / wins as f64),
    }
}

pub fn aggregate_metrics(outcomes: &[EpisodeOutcome]) -> Result<MetricsReport> {
    if outcomes.is_empty() {
        return Err(Error::invalid("no outcomes to aggregate"));
    }
    let all = summarize(outcomes.iter());
    let mut modes: Vec<String> = outcomes.iter().map(mode_name).collect();
    modes.sort();
    modes.dedup();
    let by_mode = modes
        .into_iter()
        .map(|m| {
            let s = summarize(outcomes.iter().filter(|o| mode_name(o) == m));
            (m, s)
        })
        .collect();
    let first = &outcomes[0].world_id;
    let world_id = outcomes.iter().all(|o| &o.world_id == first).then(|| first.clone());
    Ok(MetricsReport {
        n_samples: all.n_samples,
        suc: all.suc,
        pass_at_1: all.pass_at_1,
        avg_re: all.avg_re,
        world_id,
        by_mode,
    })
}

fn mode_name(o: &EpisodeOutcome) -> String {
    serde_json::to_value(o.mode)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// `NA` marks an undefined value.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl MetricsReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("mode\tn\tsuc\tpass_at_1\tavg_re\n");
        let mut row = |name: &str, n: usize, suc: f64, p1: f64, re: Option<f64>| {
            let _ = writeln!(out, "{name}\t{n}\t{suc:.6}\t{p1:.6}\t{}", fmt_opt(re));
        };
        for (m, s) in &self.by_mode {
            row(m, s.n_samples, s.suc, s.pass_at_1, s.avg_re);
        }
        row("all", self.n_samples, self.suc, self.pass_at_1, self.avg_re);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub metric: &'static str,
    pub learned: Option<f64>,
    pub semantic: Option<f64>,
    /// learned − semantic; undefined if either side is.
    pub delta: Option<f64>,
}

/// Side-by-side metrics of two reports over the same world and sample
/// count.
pub fn compare_modes(learned: &MetricsReport, semantic: &MetricsReport) -> Result<Vec<ComparisonRow>> {
    if learned.n_samples != semantic.n_samples {
        return Err(Error::InvalidComparison(format!(
            "sample counts differ: {} vs {}",
            learned.n_samples, semantic.n_samples
        )));
    }
    match (&learned.world_id, &semantic.world_id) {
        (Some(a), Some(b)) if a == b => {}
        (a, b) => {
            return Err(Error::InvalidComparison(format!("world ids differ or are mixed: {a:?} vs {b:?}")));
        }
    }
    let row = |metric, l: Option<f64>, s: Option<f64>| ComparisonRow {
        metric,
        learned: l,
        semantic: s,
        delta: l.zip(s).map(|(l, s)| l - s),
    };
    Ok(vec![
        row("suc", Some(learned.suc), Some(semantic.suc)),
        row("pass_at_1", Some(learned.pass_at_1), Some(semantic.pass_at_1)),
        row("avg_re", learned.avg_re, semantic.avg_re),
    ])
}

pub fn comparison_tsv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("metric\tlearned\tsemantic\tdelta\n");
    for r in rows {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", r.metric, fmt_opt(r.learned), fmt_opt(r.semantic), fmt_opt(r.delta));
    }
    out
}
