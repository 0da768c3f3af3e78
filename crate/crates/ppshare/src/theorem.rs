//! Numeric verification of the merge stability guarantee: when merged
//! prototypes stay within distance bounds of their targets, each class
//! logit moves by at most a closed-form budget, and a sufficient top-2
//! margin keeps the prediction unchanged.
//!
//! The guarantee is stated for an idealized head (weight 1 on a
//! prototype's own class, 0 elsewhere) and for logits built on each
//! prototype's globally nearest training patch. This module checks the
//! assumptions, evaluates those logits before and after a merge plan,
//! and compares the observed changes against the budgets.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::{FeatureDataset, PatchGrid};
use crate::error::{Error, Result};
use crate::model::{argmax, AddOn, Head, Model, PrototypePool};
use crate::prune::merge_pair;

/// Relative slack for all inequality checks.
pub const CHECK_TOL: f64 = 1e-9;

fn leq(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + CHECK_TOL * lhs.abs().max(rhs.abs()).max(1.0)
}

/// `min(sqrt(1+delta) - 1, 1 - 1/sqrt(2-delta))`. Total on [0, 1];
/// degenerates to 0 at both ends.
pub fn theta(delta: f64) -> f64 {
    ((1.0 + delta).sqrt() - 1.0).min(1.0 - 1.0 / (2.0 - delta).sqrt())
}

/// Logit budget for a class with `merged_count` prototypes merged away.
pub fn delta_max(delta: f64, merged_count: usize) -> f64 {
    merged_count as f64 * ((1.0 + delta) * (2.0 - delta)).ln()
}

/// The sharpness parameter of the guarantee; only the open interval
/// (0, 1) gives a usable (positive) theta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TheoremParams {
    delta: f64,
}

impl TheoremParams {
    pub fn new(delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::validation(format!(
                "delta must lie strictly inside (0, 1), got {delta}"
            )));
        }
        Ok(TheoremParams { delta })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn theta(&self) -> f64 {
        theta(self.delta)
    }

    pub fn delta_max(&self, merged_count: usize) -> f64 {
        delta_max(self.delta, merged_count)
    }
}

/// One planned merge: `removed` folds into `target`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PlannedMerge {
    pub removed: usize,
    pub target: usize,
}

/// A set of merges in the guarantee's setting: every involved prototype
/// belongs to exactly one class, targets belong to other classes than
/// the prototypes merged into them, and no class reuses a target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergePlan {
    pub merges: Vec<PlannedMerge>,
}

impl MergePlan {
    /// The single class of a prototype, or an error if it has several
    /// (the guarantee is stated for exclusive pre-merge assignment).
    fn sole_class(model: &Model, id: usize) -> Result<usize> {
        let set = &model.pool.assigned[id];
        if set.len() != 1 {
            return Err(Error::validation(format!(
                "prototype {id} must belong to exactly one class, has {:?}",
                set
            )));
        }
        Ok(*set.iter().next().unwrap())
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        let total = model.pool.total();
        let mut removed_seen = std::collections::BTreeSet::new();
        let mut class_targets = std::collections::BTreeMap::<usize, Vec<usize>>::new();
        for m in &self.merges {
            if m.removed >= total || m.target >= total {
                return Err(Error::validation("merge plan index out of range"));
            }
            if m.removed == m.target {
                return Err(Error::validation("merge plan maps a prototype to itself"));
            }
            if !model.pool.alive[m.removed] || !model.pool.alive[m.target] {
                return Err(Error::validation("merge plan touches a dead prototype"));
            }
            if !removed_seen.insert(m.removed) {
                return Err(Error::validation(format!(
                    "prototype {} merged twice",
                    m.removed
                )));
            }
            let k = Self::sole_class(model, m.removed)?;
            let t = Self::sole_class(model, m.target)?;
            if k == t {
                return Err(Error::validation(format!(
                    "target {} shares class {k} with removed prototype {}",
                    m.target, m.removed
                )));
            }
            class_targets.entry(k).or_default().push(m.target);
        }
        for m in &self.merges {
            if removed_seen.contains(&m.target) {
                return Err(Error::validation(format!(
                    "prototype {} is both removed and a target",
                    m.target
                )));
            }
        }
        for (k, targets) in &class_targets {
            let mut uniq = targets.clone();
            uniq.sort_unstable();
            uniq.dedup();
            if uniq.len() != targets.len() {
                return Err(Error::validation(format!(
                    "class {k} merges two prototypes into the same target"
                )));
            }
        }
        Ok(())
    }

    /// Number of prototypes merged away per class.
    pub fn merged_counts(&self, model: &Model, num_classes: usize) -> Result<Vec<usize>> {
        let mut counts = vec![0usize; num_classes];
        for m in &self.merges {
            counts[Self::sole_class(model, m.removed)?] += 1;
        }
        Ok(counts)
    }
}

/// Applies a merge plan to a copy of the model.
pub fn apply_plan(model: &Model, plan: &MergePlan) -> Result<Model> {
    plan.validate(model)?;
    let mut out = model.clone();
    for m in &plan.merges {
        merge_pair(&mut out, m.target, m.removed)?;
    }
    Ok(out)
}

/// One evaluated inequality, with the quantities that went into it.
#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    /// which condition: "idealized-weights", "merge-distance",
    /// "own-class-merge-distance", "own-class-patch-radius"
    pub condition: String,
    pub class: Option<usize>,
    pub removed: Option<usize>,
    pub target: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub passed: bool,
    pub note: String,
}

/// Assumption audit for one (model, data, plan, input) instance.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub expected_class: usize,
    pub predicted_class: usize,
    /// input classified correctly before the merge
    pub precondition_ok: bool,
    pub checks: Vec<CheckRecord>,
    pub overall: bool,
}

impl AssumptionReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn nearest_distance(model: &Model, data: &FeatureDataset, id: usize) -> Result<f64> {
    Ok(model.nearest_patch(data, id)?.distance)
}

/// Checks the guarantee's preconditions on a concrete instance.
///
/// `x` indexes the input image inside `data`; `c` is its class. The
/// nearest-patch distances are taken over all of `data`, matching the
/// logit definition used by `verify_bounds`.
pub fn check_assumptions(
    model: &Model,
    data: &FeatureDataset,
    plan: &MergePlan,
    params: &TheoremParams,
    x: usize,
    c: usize,
) -> Result<AssumptionReport> {
    model.validate()?;
    model.check_compatible(data)?;
    plan.validate(model)?;
    if x >= data.len() {
        return Err(Error::validation(format!("input index {x} out of range")));
    }
    let k_classes = model.num_classes();
    if c >= k_classes {
        return Err(Error::validation(format!("class {c} out of range")));
    }

    let predicted = model.predict(&data.images[x], data.feat_dim)?;
    let precondition_ok = predicted == c;
    let mut checks = Vec::new();

    // idealized head: weight 1 on the prototype's own class, 0 elsewhere
    let alive = model.pool.alive_ids();
    for (col, &id) in alive.iter().enumerate() {
        for cls in 0..k_classes {
            let w = model.head.weights[cls][col];
            let expect = if model.pool.assigned[id].contains(&cls) {
                1.0
            } else {
                0.0
            };
            let err = (w - expect).abs();
            if err > CHECK_TOL {
                checks.push(CheckRecord {
                    condition: "idealized-weights".into(),
                    class: Some(cls),
                    removed: None,
                    target: Some(id),
                    lhs: w,
                    rhs: expect,
                    slack: -err,
                    passed: false,
                    note: format!("head weight for prototype {id} deviates from 0/1 pattern"),
                });
            }
        }
    }
    if checks.is_empty() {
        checks.push(CheckRecord {
            condition: "idealized-weights".into(),
            class: None,
            removed: None,
            target: None,
            lhs: 0.0,
            rhs: 0.0,
            slack: 0.0,
            passed: true,
            note: "head matches the 0/1 assignment pattern".into(),
        });
    }

    let sqrt_eps = model.epsilon.sqrt();
    let th = params.theta();
    for m in &plan.merges {
        let k = MergePlan::sole_class(model, m.removed)?;
        let r_p = nearest_distance(model, data, m.removed)?;
        let dist =
            crate::model::sq_dist(&model.pool.protos[m.removed], &model.pool.protos[m.target])
                .sqrt();
        if k == c {
            // own class: merge distance within (sqrt(1+delta)-1) of the
            // patch radius, and the radius itself below sqrt(1-delta)
            let rhs = ((1.0 + params.delta()).sqrt() - 1.0) * r_p;
            checks.push(CheckRecord {
                condition: "own-class-merge-distance".into(),
                class: Some(k),
                removed: Some(m.removed),
                target: Some(m.target),
                lhs: dist,
                rhs,
                slack: rhs - dist,
                passed: leq(dist, rhs),
                note: format!("nearest patch radius {r_p}"),
            });
            let cap = (1.0 - params.delta()).sqrt();
            checks.push(CheckRecord {
                condition: "own-class-patch-radius".into(),
                class: Some(k),
                removed: Some(m.removed),
                target: Some(m.target),
                lhs: r_p,
                rhs: cap,
                slack: cap - r_p,
                passed: leq(r_p, cap),
                note: "patch radius bound for the correct class".into(),
            });
        } else {
            // other classes: theta ball shrunk by sqrt(epsilon)
            let rhs = th * r_p - sqrt_eps;
            checks.push(CheckRecord {
                condition: "merge-distance".into(),
                class: Some(k),
                removed: Some(m.removed),
                target: Some(m.target),
                lhs: dist,
                rhs,
                slack: rhs - dist,
                passed: leq(dist, rhs),
                note: format!("nearest patch radius {r_p}, sqrt(epsilon) slack {sqrt_eps}"),
            });
        }
    }

    let overall = precondition_ok && checks.iter().all(|ch| ch.passed);
    Ok(AssumptionReport {
        expected_class: c,
        predicted_class: predicted,
        precondition_ok,
        checks,
        overall,
    })
}

/// Per-prototype logit term from the globally nearest training patch.
fn proof_term(r: f64, epsilon: f64) -> f64 {
    ((r * r + 1.0) / (r * r + epsilon)).ln()
}

/// Class logits built on each alive prototype's nearest-patch distance,
/// weighted by the head. Input-independent by construction.
pub fn proof_logits(model: &Model, data: &FeatureDataset) -> Result<Vec<f64>> {
    let alive = model.pool.alive_ids();
    let terms = alive
        .par_iter()
        .map(|&id| {
            Ok(proof_term(
                nearest_distance(model, data, id)?,
                model.epsilon,
            ))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(model
        .head
        .weights
        .iter()
        .map(|row| row.iter().zip(&terms).map(|(w, t)| w * t).sum())
        .collect())
}

/// Outcome of checking the logit budgets on one merge.
#[derive(Debug, Clone, Serialize)]
pub struct BoundsVerdict {
    pub delta: f64,
    /// proof logits per class, before and after the merge
    pub logits_before: Vec<f64>,
    pub logits_after: Vec<f64>,
    /// per-class budgets
    pub budgets: Vec<f64>,
    /// observed drop of the correct class's logit
    pub drop_c: f64,
    /// largest observed rise among other classes
    pub max_rise: f64,
    pub bounds_ok: bool,
    /// top-2 gap of the pre-merge proof logits
    pub margin: f64,
    /// required gap: own budget plus the largest other budget
    pub margin_threshold: f64,
    pub margin_condition: bool,
    pub argmax_before: usize,
    pub argmax_after: usize,
    pub prediction_preserved: bool,
    /// the network's own logits for the input, for side-by-side reading
    pub network_logits_before: Vec<f64>,
    pub network_logits_after: Vec<f64>,
}

/// Evaluates the guarantee numerically: proof logits before and after,
/// per-class budgets, margin condition, and prediction stability.
pub fn verify_bounds(
    before: &Model,
    after: &Model,
    data: &FeatureDataset,
    plan: &MergePlan,
    params: &TheoremParams,
    x: usize,
    c: usize,
) -> Result<BoundsVerdict> {
    plan.validate(before)?;
    before.check_compatible(data)?;
    after.check_compatible(data)?;
    let k_classes = before.num_classes();
    if after.num_classes() != k_classes {
        return Err(Error::validation("class count changed across the merge"));
    }
    if c >= k_classes {
        return Err(Error::validation(format!("class {c} out of range")));
    }
    if x >= data.len() {
        return Err(Error::validation(format!("input index {x} out of range")));
    }

    let logits_before = proof_logits(before, data)?;
    let logits_after = proof_logits(after, data)?;
    let counts = plan.merged_counts(before, k_classes)?;
    let budgets: Vec<f64> = counts.iter().map(|&m| params.delta_max(m)).collect();

    let drop_c = logits_before[c] - logits_after[c];
    let mut bounds_ok = leq(drop_c, budgets[c]);
    let mut max_rise = f64::NEG_INFINITY;
    for k in 0..k_classes {
        if k == c {
            continue;
        }
        let rise = logits_after[k] - logits_before[k];
        if rise > max_rise {
            max_rise = rise;
        }
        if !leq(rise, budgets[k]) {
            bounds_ok = false;
        }
    }
    if k_classes == 1 {
        max_rise = 0.0;
    }

    let argmax_before = argmax(&logits_before);
    let argmax_after = argmax(&logits_after);
    let mut sorted = logits_before.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let margin = if sorted.len() > 1 {
        sorted[0] - sorted[1]
    } else {
        f64::INFINITY
    };
    let other_budget = budgets
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != c)
        .map(|(_, &b)| b)
        .fold(0.0f64, f64::max);
    let margin_threshold = budgets[c] + other_budget;
    let margin_condition = margin >= margin_threshold;

    let network_logits_before = before.logits(&data.images[x], data.feat_dim)?;
    let network_logits_after = after.logits(&data.images[x], data.feat_dim)?;

    Ok(BoundsVerdict {
        delta: params.delta(),
        logits_before,
        logits_after,
        budgets,
        drop_c,
        max_rise,
        bounds_ok,
        margin,
        margin_threshold,
        margin_condition,
        argmax_before,
        argmax_after,
        prediction_preserved: argmax_before == argmax_after,
        network_logits_before,
        network_logits_after,
    })
}

/// Shape of a constructed verification instance.
#[derive(Debug, Clone, Serialize)]
pub struct ConstructSpec {
    pub num_classes: usize,
    pub retained_per_class: usize,
    pub merged_per_class: usize,
    pub feat_dim: usize,
    pub epsilon: f64,
    /// Cap on nearest-patch radii; merges become infeasible when the
    /// theta ball shrinks below the sqrt(epsilon) slack within this cap.
    pub max_radius: f64,
}

impl Default for ConstructSpec {
    fn default() -> Self {
        ConstructSpec {
            num_classes: 3,
            retained_per_class: 3,
            merged_per_class: 1,
            feat_dim: 4,
            epsilon: 1e-4,
            max_radius: 0.9,
        }
    }
}

impl ConstructSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("need at least two classes"));
        }
        if self.retained_per_class < 1 {
            return Err(Error::validation(
                "need at least one retained prototype per class",
            ));
        }
        if self.feat_dim < 2 {
            return Err(Error::validation("need at least two feature dimensions"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::validation("epsilon must lie in (0, 1)"));
        }
        if !(self.max_radius > 0.0 && self.max_radius.is_finite()) {
            return Err(Error::validation("max_radius must be positive"));
        }
        let capacity = (self.num_classes - 1) * self.retained_per_class;
        if self.merged_per_class > capacity {
            return Err(Error::validation(
                "not enough retained prototypes in other classes to host merge targets",
            ));
        }
        Ok(())
    }
}

/// A concrete, self-contained verification instance.
#[derive(Debug, Clone)]
pub struct Instance {
    pub model: Model,
    pub data: FeatureDataset,
    pub plan: MergePlan,
    pub params: TheoremParams,
    /// input image index within `data`
    pub x: usize,
    /// its class
    pub c: usize,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec<f64> = (0..dim)
            .map(|_| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
            .collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Builds an instance satisfying every assumption by working the
/// inequalities backwards: pick a nearest-patch radius inside the caps,
/// then place the merge target inside the allowed ball with slack.
///
/// Each prototype gets its own spatial island holding exactly one
/// training patch; merged prototypes share an island with their target,
/// laid out on a line so that each prototype's designated patch stays
/// its strict global nearest. The correct class is always 0, and its
/// standalone prototypes get tiny radii so its logit towers over the
/// rest.
pub fn construct_instance(spec: &ConstructSpec, delta: f64, seed: u64) -> Result<Instance> {
    spec.validate()?;
    let params = TheoremParams::new(delta)?;
    let th = params.theta();
    let sqrt_eps = spec.epsilon.sqrt();
    // other-class merges need theta * r > sqrt(epsilon) with room to spare
    let r_lo = 1.25 * sqrt_eps / th;
    if r_lo * 1.05 >= spec.max_radius {
        return Err(Error::infeasible(format!(
            "theta {th:.6} leaves no feasible radius below {}: sqrt(epsilon) slack needs {r_lo:.4}",
            spec.max_radius
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = spec.num_classes;
    let ret = spec.retained_per_class;
    let mer = spec.merged_per_class;
    let per_class = ret + mer;
    let total = k * per_class;
    let c = 0usize;

    let block = |class: usize| class * per_class;

    // greedy target assignment: most free slots first, no reuse
    let mut free: Vec<usize> = vec![ret; k];
    let mut merges = Vec::with_capacity(k * mer);
    for class in 0..k {
        for _ in 0..mer {
            let host = (0..k)
                .filter(|&i| i != class && free[i] > 0)
                .max_by_key(|&i| (free[i], usize::MAX - i))
                .ok_or_else(|| {
                    Error::infeasible("no retained prototype left to host a merge target")
                })?;
            let idx = ret - free[host];
            free[host] -= 1;
            merges.push(PlannedMerge {
                removed: block(class) + ret + (merges.len() % mer.max(1)),
                target: block(host) + idx,
            });
        }
    }
    // fix removed ids: per-class sequence
    {
        let mut next = vec![0usize; k];
        for m in &mut merges {
            let class = m.removed / per_class;
            m.removed = block(class) + ret + next[class];
            next[class] += 1;
        }
    }
    let is_target: Vec<bool> = {
        let mut v = vec![false; total];
        for m in &merges {
            v[m.target] = true;
        }
        v
    };

    // island lattice, wide enough that islands never interact
    let spacing = 40.0 * spec.max_radius.max(1.0);
    let islands = total; // at most one island per prototype
    let lattice = 8usize;
    let mut axes = 1;
    while lattice.pow(axes as u32) < islands {
        axes += 1;
    }
    if axes > spec.feat_dim {
        return Err(Error::validation(
            "feat_dim too small for the island lattice; raise it or shrink the pool",
        ));
    }
    let base_point = |island: usize| -> Vec<f64> {
        let mut coords = vec![0.0; spec.feat_dim];
        let mut m = island;
        for coord in coords.iter_mut().take(axes) {
            *coord = spacing * (1.0 + (m % lattice) as f64);
            m /= lattice;
        }
        coords
    };

    let mut protos: Vec<Vec<f64>> = vec![Vec::new(); total];
    let mut patches: Vec<Vec<f64>> = vec![Vec::new(); total]; // designated patch per prototype
    let mut island_of = vec![usize::MAX; total];

    // standalone islands for every prototype that is not a merge target;
    // targets are placed inside their merge's island below
    let mut next_island = 0;
    for id in 0..total {
        let class = id / per_class;
        let merged = id % per_class >= ret;
        if is_target[id] || merged {
            continue;
        }
        let b = base_point(next_island);
        island_of[id] = next_island;
        next_island += 1;
        let e = unit_vector(&mut rng, spec.feat_dim);
        let r = if class == c {
            rng.random_range(0.02..0.05)
        } else {
            rng.random_range(0.6..0.85) * spec.max_radius
        };
        protos[id] = b.clone();
        patches[id] = b.iter().zip(&e).map(|(x, u)| x + r * u).collect();
    }

    // merge islands: removed prototype at the base, target on a line
    // through it; patches sit on the same line, on opposite sides, so
    // each prototype's own patch is its strict nearest
    for m in &merges {
        let class = m.removed / per_class;
        let b = base_point(next_island);
        island_of[m.removed] = next_island;
        island_of[m.target] = next_island;
        next_island += 1;
        let e = unit_vector(&mut rng, spec.feat_dim);
        let (r_p, d) = if class == c {
            let cap = (1.0 - delta).sqrt().min(spec.max_radius);
            let r = rng.random_range(0.15..0.45) * cap;
            let d = rng.random_range(0.2..0.7) * (((1.0 + delta).sqrt() - 1.0) * r);
            (r, d)
        } else {
            let r = rng.random_range(r_lo * 1.05..spec.max_radius);
            let d = rng.random_range(0.2..0.7) * (th * r - sqrt_eps);
            (r, d)
        };
        let r_t = r_p + d / 2.0;
        protos[m.removed] = b.clone();
        protos[m.target] = b.iter().zip(&e).map(|(x, u)| x + d * u).collect();
        patches[m.removed] = b.iter().zip(&e).map(|(x, u)| x - r_p * u).collect();
        patches[m.target] = b.iter().zip(&e).map(|(x, u)| x + (d + r_t) * u).collect();
    }

    let assigned: Vec<std::collections::BTreeSet<usize>> =
        (0..total).map(|id| [id / per_class].into()).collect();
    let head = Head {
        weights: (0..k)
            .map(|cls| {
                (0..total)
                    .map(|id| if id / per_class == cls { 1.0 } else { 0.0 })
                    .collect()
            })
            .collect(),
    };
    let model = Model::new(
        AddOn::disabled(),
        PrototypePool::new(protos, assigned),
        head,
        spec.epsilon,
    )?;

    // one single-patch image per prototype, labeled by its class
    let images: Vec<PatchGrid> = (0..total)
        .map(|id| {
            PatchGrid::new(
                id / per_class,
                patches[id].iter().map(|&v| v as f32).collect(),
            )
        })
        .collect();
    let data = FeatureDataset::new(images, k, spec.feat_dim, 1, 1)?;

    // the input: the designated patch image of the first class-c prototype
    let x = 0;
    let plan = MergePlan { merges };
    plan.validate(&model)?;
    Ok(Instance {
        model,
        data,
        plan,
        params,
        x,
        c,
    })
}

/// Construct, audit, merge, and verify one instance.
pub fn verify_instance(
    spec: &ConstructSpec,
    delta: f64,
    seed: u64,
) -> Result<(AssumptionReport, BoundsVerdict)> {
    let inst = construct_instance(spec, delta, seed)?;
    let report = check_assumptions(
        &inst.model,
        &inst.data,
        &inst.plan,
        &inst.params,
        inst.x,
        inst.c,
    )?;
    let after = apply_plan(&inst.model, &inst.plan)?;
    let verdict = verify_bounds(
        &inst.model,
        &after,
        &inst.data,
        &inst.plan,
        &inst.params,
        inst.x,
        inst.c,
    )?;
    Ok((report, verdict))
}

/// Aggregate result of a randomized sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepSummary {
    pub delta: f64,
    pub trials: usize,
    pub assumption_failures: usize,
    pub bound_violations: usize,
    /// instances whose pre-merge margin met the threshold
    pub margin_hold_count: usize,
    /// margin held but the argmax moved: must stay zero
    pub flips_under_margin: usize,
    /// first few failure descriptions, for diagnostics
    pub failures: Vec<String>,
}

impl SweepSummary {
    pub fn clean(&self) -> bool {
        self.assumption_failures == 0 && self.bound_violations == 0 && self.flips_under_margin == 0
    }
}

/// Runs `trials` constructed instances at one delta, in parallel.
pub fn run_sweep(
    spec: &ConstructSpec,
    delta: f64,
    trials: usize,
    base_seed: u64,
) -> Result<SweepSummary> {
    if trials == 0 {
        return Err(Error::validation("trials must be at least 1"));
    }
    let results: Vec<(bool, bool, bool, bool, Option<String>)> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let (report, verdict) = verify_instance(spec, delta, seed)?;
            let flip = verdict.margin_condition && !verdict.prediction_preserved;
            let failure = if !report.overall || !verdict.bounds_ok || flip {
                Some(format!(
                    "seed {seed}: assumptions {}, bounds {}, flip_under_margin {}",
                    report.overall, verdict.bounds_ok, flip
                ))
            } else {
                None
            };
            Ok((
                report.overall,
                verdict.bounds_ok,
                verdict.margin_condition,
                flip,
                failure,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = SweepSummary {
        delta,
        trials,
        assumption_failures: 0,
        bound_violations: 0,
        margin_hold_count: 0,
        flips_under_margin: 0,
        failures: Vec::new(),
    };
    for (assume_ok, bounds_ok, margin, flip, failure) in results {
        if !assume_ok {
            summary.assumption_failures += 1;
        }
        if !bounds_ok {
            summary.bound_violations += 1;
        }
        if margin {
            summary.margin_hold_count += 1;
        }
        if flip {
            summary.flips_under_margin += 1;
        }
        if let Some(f) = failure {
            if summary.failures.len() < 5 {
                summary.failures.push(f);
            }
        }
    }
    Ok(summary)
}
