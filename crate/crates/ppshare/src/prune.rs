//! Merge-pruning: fold one prototype's head column into another's,
//! walk a pair ranking to shrink the pool step by step, and log the
//! accuracy trajectory.

use std::fs::File;
use std::io::{BufWriter, Write as IoWrite};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::similarity::{rank_pairs, PairRanking, Strategy};
use crate::train::{accuracy, finetune_scoped, FinetuneScope, TrainConfig};

/// One executed merge. `key` is the ranking key that scheduled it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub kept: usize,
    pub removed: usize,
    pub key: f64,
}

/// Folds prototype `remove` into `keep`: the head column of `remove` is
/// added to the column of `keep` and then dropped, class assignments
/// union, and `remove` becomes a tombstone pointing at `keep`.
///
/// Every class row sum of the head is preserved, so the total evidence
/// available to each class never changes during pruning.
pub fn merge_pair(model: &mut Model, keep: usize, remove: usize) -> Result<()> {
    if keep == remove {
        return Err(Error::validation("cannot merge a prototype with itself"));
    }
    let total = model.pool.total();
    if keep >= total || remove >= total {
        return Err(Error::validation("merge index out of range"));
    }
    if !model.pool.alive[keep] || !model.pool.alive[remove] {
        return Err(Error::validation("merge endpoints must be alive"));
    }
    let alive = model.pool.alive_ids();
    let col_keep = alive.iter().position(|&i| i == keep).unwrap();
    let col_remove = alive.iter().position(|&i| i == remove).unwrap();
    for row in &mut model.head.weights {
        row[col_keep] += row[col_remove];
        row.remove(col_remove);
    }
    let absorbed = model.pool.assigned[remove].clone();
    model.pool.assigned[keep].extend(absorbed);
    model.pool.alive[remove] = false;
    model.pool.merge_parent[remove] = Some(keep);
    Ok(())
}

/// Merge direction for a ranked pair: keep the prototype whose head
/// column carries more weight (L1), breaking ties toward the lower id.
pub fn choose_direction(model: &Model, a: usize, b: usize) -> (usize, usize) {
    let alive = model.pool.alive_ids();
    let col_l1 = |id: usize| -> f64 {
        let col = alive.iter().position(|&i| i == id).unwrap();
        model.head.weights.iter().map(|row| row[col].abs()).sum()
    };
    let (la, lb) = (col_l1(a), col_l1(b));
    if la > lb || (la == lb && a < b) {
        (a, b)
    } else {
        (b, a)
    }
}

/// Result of one pruning step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub merges: Vec<MergeRecord>,
    /// Key of the last merge inside the quota; ties at this key extend
    /// the step past the quota.
    pub boundary_key: Option<f64>,
}

/// Executes one pruning step against a ranking computed for the current
/// pool: merge the closest `round(zeta * alive)` pairs (at least one),
/// then keep merging through ties at the boundary key. Ranked pairs
/// whose endpoints were already merged together are skipped; endpoints
/// that died earlier in the step follow their tombstones. Never shrinks
/// the pool below `min_pool`.
pub fn prune_step(
    model: &mut Model,
    ranking: &PairRanking,
    zeta: f64,
    min_pool: usize,
) -> Result<StepOutcome> {
    if !(zeta > 0.0 && zeta < 1.0) {
        return Err(Error::validation("zeta must lie in (0, 1)"));
    }
    if ranking.pool_fp != model.pool_fingerprint() {
        return Err(Error::invariant(
            "pair ranking is stale: pool changed since it was computed",
        ));
    }
    let alive = model.pool.alive_count();
    let min_pool = min_pool.max(1);
    if alive <= min_pool {
        return Ok(StepOutcome {
            merges: Vec::new(),
            boundary_key: None,
        });
    }
    let budget = alive - min_pool;
    let quota = ((zeta * alive as f64).round() as usize).max(1).min(budget);

    let mut merges = Vec::with_capacity(quota);
    let mut boundary: Option<f64> = None;
    for pair in &ranking.pairs {
        if merges.len() >= quota {
            // extend only through exact ties at the boundary
            if boundary != Some(pair.key) {
                break;
            }
            if merges.len() >= budget {
                break;
            }
        }
        let ra = model.pool.representative(pair.a)?;
        let rb = model.pool.representative(pair.b)?;
        if ra == rb {
            continue;
        }
        let (keep, remove) = choose_direction(model, ra, rb);
        merge_pair(model, keep, remove)?;
        if merges.len() < quota {
            boundary = Some(pair.key);
        }
        merges.push(MergeRecord {
            kept: keep,
            removed: remove,
            key: pair.key,
        });
    }
    Ok(StepOutcome {
        merges,
        boundary_key: boundary,
    })
}

/// Knobs for a pruning run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub strategy: Strategy,
    /// Fraction of the current pool merged per step.
    pub zeta: f64,
    /// Maximum number of steps.
    pub steps: usize,
    /// Stop once the pool is this small.
    pub target_pool: Option<usize>,
    /// What finetuning after each step may update.
    pub scope: FinetuneScope,
    /// Seed for the random strategy's shuffles.
    pub seed: u64,
    /// Restrict candidate pairs to prototypes with disjoint class sets.
    pub inter_class_only: bool,
    /// Stop when validation accuracy falls more than this below its
    /// value before pruning.
    pub max_val_drop: Option<f64>,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            strategy: Strategy::DataDependent,
            zeta: 0.10,
            steps: 15,
            target_pool: None,
            scope: FinetuneScope::HeadOnly,
            seed: 0,
            inter_class_only: false,
            max_val_drop: None,
        }
    }
}

impl PruneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::validation("zeta must lie in (0, 1)"));
        }
        if self.steps == 0 {
            return Err(Error::validation("steps must be at least 1"));
        }
        if let Some(t) = self.target_pool {
            if t == 0 {
                return Err(Error::validation("target_pool must be at least 1"));
            }
        }
        if let Some(d) = self.max_val_drop {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(Error::validation("max_val_drop must be non-negative"));
            }
        }
        Ok(())
    }
}

/// One row of the pruning trajectory. Step 0 records the state before
/// any merging.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub pool_before: usize,
    pub pool_after: usize,
    /// Fraction of the original pool pruned away so far.
    pub pruned_fraction: f64,
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub merges: Vec<MergeRecord>,
}

/// Full pruning trajectory with the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneLog {
    pub strategy: Strategy,
    pub zeta: f64,
    pub scope: FinetuneScope,
    pub seed: u64,
    pub inter_class_only: bool,
    pub initial_pool: usize,
    pub records: Vec<StepRecord>,
}

impl PruneLog {
    pub fn final_train_acc(&self) -> f64 {
        self.records.last().map(|r| r.train_acc).unwrap_or(0.0)
    }

    pub fn final_val_acc(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.val_acc)
    }

    /// Accuracy at the first record with at least `fraction` of the
    /// original pool pruned, if the run got that far.
    pub fn acc_at_pruned_fraction(&self, fraction: f64) -> Option<&StepRecord> {
        self.records.iter().find(|r| r.pruned_fraction >= fraction)
    }
}

/// Prunes `model` in place: per step, rank pairs under the configured
/// strategy, merge around `zeta` of the pool, finetune, evaluate.
pub fn run_prune(
    model: &mut Model,
    train: &FeatureDataset,
    val: Option<&FeatureDataset>,
    tcfg: &TrainConfig,
    pcfg: &PruneConfig,
) -> Result<PruneLog> {
    tcfg.validate()?;
    pcfg.validate()?;
    model.check_compatible(train)?;
    let initial_pool = model.pool.alive_count();
    let min_pool = pcfg.target_pool.unwrap_or(1).max(1);

    let mut records = Vec::with_capacity(pcfg.steps + 1);
    let train_acc = accuracy(model, train)?;
    let val_acc = val.map(|v| accuracy(model, v)).transpose()?;
    let initial_val = val_acc;
    records.push(StepRecord {
        step: 0,
        pool_before: initial_pool,
        pool_after: initial_pool,
        pruned_fraction: 0.0,
        train_acc,
        val_acc,
        merges: Vec::new(),
    });

    for step in 1..=pcfg.steps {
        let pool_before = model.pool.alive_count();
        if pool_before <= min_pool || pool_before < 2 {
            break;
        }
        let ranking = rank_pairs(
            model,
            pcfg.strategy,
            Some(train),
            Some(pcfg.seed.wrapping_add(step as u64)),
            pcfg.inter_class_only,
        )?;
        let outcome = prune_step(model, &ranking, pcfg.zeta, min_pool)?;
        if outcome.merges.is_empty() {
            break; // no mergeable pair left under the candidate filter
        }
        finetune_scoped(model, train, tcfg.finetune_iters, pcfg.scope, tcfg)?;
        let pool_after = model.pool.alive_count();
        let train_acc = accuracy(model, train)?;
        let val_acc = val.map(|v| accuracy(model, v)).transpose()?;
        records.push(StepRecord {
            step,
            pool_before,
            pool_after,
            pruned_fraction: 1.0 - pool_after as f64 / initial_pool as f64,
            train_acc,
            val_acc,
            merges: outcome.merges,
        });
        if let (Some(limit), Some(init), Some(now)) = (pcfg.max_val_drop, initial_val, val_acc) {
            if init - now > limit {
                break;
            }
        }
    }

    Ok(PruneLog {
        strategy: pcfg.strategy,
        zeta: pcfg.zeta,
        scope: pcfg.scope,
        seed: pcfg.seed,
        inter_class_only: pcfg.inter_class_only,
        initial_pool,
        records,
    })
}

/// One JSON record per line, step order.
pub fn write_prune_jsonl(log: &PruneLog, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    for rec in &log.records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Step-level accuracy trajectory for plotting.
pub fn write_prune_csv(log: &PruneLog, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "step,pool_size,pruned_fraction,train_acc,val_acc")?;
    for rec in &log.records {
        let val = rec.val_acc.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{}",
            rec.step, rec.pool_after, rec.pruned_fraction, rec.train_acc, val
        )?;
    }
    w.flush()?;
    Ok(())
}
