//! The prototype-layer classifier: optional add-on projection, prototype
//! pool with class assignments, log-ratio patch similarity, and a
//! bias-free linear head.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureDataset, PatchGrid};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-4;
const CHECKPOINT_VERSION: u32 = 1;

/// Squared Euclidean distance, accumulated in f64.
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Two per-patch affine maps with ReLU after the first and sigmoid after
/// the second. Disabled means identity pass-through (input dim must equal
/// prototype dim).
#[derive(Debug, Clone, PartialEq)]
pub struct AddOn {
    pub enabled: bool,
    /// mid x d_in
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    /// d_out x mid
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl AddOn {
    pub fn disabled() -> Self {
        AddOn {
            enabled: false,
            w1: Vec::new(),
            b1: Vec::new(),
            w2: Vec::new(),
            b2: Vec::new(),
        }
    }

    pub fn input_dim(&self) -> Option<usize> {
        if self.enabled {
            self.w1.first().map(|row| row.len())
        } else {
            None
        }
    }

    pub fn output_dim(&self) -> Option<usize> {
        if self.enabled {
            Some(self.w2.len())
        } else {
            None
        }
    }

    pub fn mid_dim(&self) -> usize {
        self.w1.len()
    }

    /// Hidden pre-activations, hidden activations, and output for one patch.
    /// Exposed for the trainer's backward pass.
    pub fn forward_trace(&self, patch: &[f32]) -> AddOnTrace {
        let mid: Vec<f64> = self
            .w1
            .iter()
            .zip(&self.b1)
            .map(|(row, b)| {
                row.iter()
                    .zip(patch)
                    .map(|(w, x)| w * *x as f64)
                    .sum::<f64>()
                    + b
            })
            .collect();
        let hidden: Vec<f64> = mid.iter().map(|&u| u.max(0.0)).collect();
        let out: Vec<f64> = self
            .w2
            .iter()
            .zip(&self.b2)
            .map(|(row, b)| {
                let u = row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>() + b;
                sigmoid(u)
            })
            .collect();
        AddOnTrace {
            pre_hidden: mid,
            hidden,
            out,
        }
    }

    pub fn apply(&self, patch: &[f32]) -> Vec<f64> {
        if !self.enabled {
            return patch.iter().map(|&v| v as f64).collect();
        }
        self.forward_trace(patch).out
    }

    fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        let mid = self.w1.len();
        let d_in = self.w1.first().map(|r| r.len()).unwrap_or(0);
        if mid == 0 || d_in == 0 {
            return Err(Error::validation("enabled add-on has empty first layer"));
        }
        if self.w1.iter().any(|r| r.len() != d_in) || self.b1.len() != mid {
            return Err(Error::validation("add-on first layer shape mismatch"));
        }
        let d_out = self.w2.len();
        if d_out == 0 || self.w2.iter().any(|r| r.len() != mid) || self.b2.len() != d_out {
            return Err(Error::validation("add-on second layer shape mismatch"));
        }
        let finite = self
            .w1
            .iter()
            .chain(self.w2.iter())
            .flatten()
            .chain(self.b1.iter())
            .chain(self.b2.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("add-on has non-finite parameter"));
        }
        Ok(())
    }
}

pub fn sigmoid(u: f64) -> f64 {
    if u >= 0.0 {
        1.0 / (1.0 + (-u).exp())
    } else {
        let e = u.exp();
        e / (1.0 + e)
    }
}

pub struct AddOnTrace {
    pub pre_hidden: Vec<f64>,
    pub hidden: Vec<f64>,
    pub out: Vec<f64>,
}

/// Prototype vectors with class assignments and merge bookkeeping.
///
/// Dead prototypes stay in place as tombstones; `merge_parent` chains
/// lead from a dead prototype to the live one that absorbed it.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypePool {
    pub protos: Vec<Vec<f64>>,
    pub assigned: Vec<BTreeSet<usize>>,
    pub alive: Vec<bool>,
    pub merge_parent: Vec<Option<usize>>,
}

impl PrototypePool {
    pub fn new(protos: Vec<Vec<f64>>, assigned: Vec<BTreeSet<usize>>) -> Self {
        let n = protos.len();
        PrototypePool {
            protos,
            assigned,
            alive: vec![true; n],
            merge_parent: vec![None; n],
        }
    }

    pub fn total(&self) -> usize {
        self.protos.len()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    /// Pool indices of alive prototypes, in increasing order. Head
    /// columns follow this order.
    pub fn alive_ids(&self) -> Vec<usize> {
        (0..self.total()).filter(|&i| self.alive[i]).collect()
    }

    pub fn dim(&self) -> usize {
        self.protos.first().map(|p| p.len()).unwrap_or(0)
    }

    /// Follows merge_parent links to the live representative.
    pub fn representative(&self, mut i: usize) -> Result<usize> {
        let mut hops = 0;
        while let Some(parent) = self.merge_parent[i] {
            i = parent;
            hops += 1;
            if hops > self.total() {
                return Err(Error::invariant("merge_parent chain does not terminate"));
            }
        }
        if !self.alive[i] {
            return Err(Error::invariant(format!(
                "merge_parent chain ends at dead prototype {i}"
            )));
        }
        Ok(i)
    }
}

/// Bias-free linear head. `weights[k][j]` connects alive prototype `j`
/// (in alive order) to class `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub weights: Vec<Vec<f64>>,
}

impl Head {
    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn num_columns(&self) -> usize {
        self.weights.first().map(|r| r.len()).unwrap_or(0)
    }
}

/// Full model: add-on projection, prototype pool, head, and the epsilon
/// of the similarity log-ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub add_on: AddOn,
    pub pool: PrototypePool,
    pub head: Head,
    pub epsilon: f64,
}

/// Location of the training patch nearest to a prototype.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearestPatch {
    pub image: usize,
    pub patch: usize,
    /// Euclidean (not squared) distance.
    pub distance: f64,
}

/// One (patch, prototype) activation, for top-activation reports.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Activation {
    pub patch: usize,
    pub proto: usize,
    pub score: f64,
}

/// Max over patches of `ln((||z-p||^2 + 1) / (||z-p||^2 + eps))`.
///
/// `patches` must already be in prototype space (add-on applied).
/// The result lies in `(0, ln(1/eps)]`, hitting the top exactly when
/// some patch equals the prototype.
pub fn patch_similarity(patches: &[Vec<f64>], proto: &[f64], epsilon: f64) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::validation("similarity over an empty patch set"));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::validation("epsilon must lie in (0, 1)"));
    }
    let mut best = f64::NEG_INFINITY;
    for z in patches {
        if z.len() != proto.len() {
            return Err(Error::validation(format!(
                "patch dim {} != prototype dim {}",
                z.len(),
                proto.len()
            )));
        }
        let d2 = sq_dist(z, proto);
        let s = ((d2 + 1.0) / (d2 + epsilon)).ln();
        if s > best {
            best = s;
        }
    }
    Ok(best)
}

/// Similarity of a single patch to a prototype (no max).
pub fn single_patch_similarity(z: &[f64], proto: &[f64], epsilon: f64) -> f64 {
    let d2 = sq_dist(z, proto);
    ((d2 + 1.0) / (d2 + epsilon)).ln()
}

impl Model {
    pub fn new(add_on: AddOn, pool: PrototypePool, head: Head, epsilon: f64) -> Result<Self> {
        let m = Model {
            add_on,
            pool,
            head,
            epsilon,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.head.num_classes()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::validation("epsilon must lie in (0, 1)"));
        }
        self.add_on.validate()?;
        let d = self.pool.dim();
        if self.pool.protos.iter().any(|p| p.len() != d) {
            return Err(Error::validation("prototype dimension mismatch"));
        }
        if self.pool.protos.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::validation("non-finite prototype value"));
        }
        if let Some(d_out) = self.add_on.output_dim() {
            if d_out != d {
                return Err(Error::validation(format!(
                    "add-on output dim {d_out} != prototype dim {d}"
                )));
            }
        }
        let n = self.pool.total();
        if self.pool.assigned.len() != n
            || self.pool.alive.len() != n
            || self.pool.merge_parent.len() != n
        {
            return Err(Error::validation("pool bookkeeping length mismatch"));
        }
        let k = self.head.num_classes();
        if k == 0 {
            return Err(Error::validation("head has no classes"));
        }
        let m_alive = self.pool.alive_count();
        if self.head.num_columns() != m_alive
            || self.head.weights.iter().any(|r| r.len() != m_alive)
        {
            return Err(Error::validation(format!(
                "head must have exactly one column per alive prototype ({m_alive})"
            )));
        }
        if self.head.weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::validation("non-finite head weight"));
        }
        let mut class_covered = vec![false; k];
        for i in 0..n {
            if self.pool.alive[i] {
                if self.pool.assigned[i].is_empty() {
                    return Err(Error::invariant(format!(
                        "alive prototype {i} has no assigned class"
                    )));
                }
                for &c in &self.pool.assigned[i] {
                    if c >= k {
                        return Err(Error::validation(format!(
                            "prototype {i} assigned to class {c} >= K={k}"
                        )));
                    }
                    class_covered[c] = true;
                }
            } else {
                self.pool.representative(i)?;
            }
        }
        if let Some(c) = class_covered.iter().position(|&v| !v) {
            return Err(Error::invariant(format!(
                "class {c} has no alive assigned prototype"
            )));
        }
        Ok(())
    }

    /// Errors unless the dataset's feature dimension matches what the
    /// model expects at its input.
    pub fn check_compatible(&self, data: &FeatureDataset) -> Result<()> {
        let expect = self.add_on.input_dim().unwrap_or(self.pool.dim());
        if data.feat_dim != expect {
            return Err(Error::validation(format!(
                "dataset feature dim {} != model input dim {expect}",
                data.feat_dim
            )));
        }
        Ok(())
    }

    /// All patches of a grid, projected into prototype space.
    pub fn transformed_patches(&self, grid: &PatchGrid, feat_dim: usize) -> Vec<Vec<f64>> {
        let n = grid.patches.len() / feat_dim;
        (0..n)
            .map(|i| self.add_on.apply(grid.patch(i, feat_dim)))
            .collect()
    }

    /// Per-alive-prototype similarity scores, in alive (head column) order.
    pub fn similarity_vector(&self, grid: &PatchGrid, feat_dim: usize) -> Result<Vec<f64>> {
        let patches = self.transformed_patches(grid, feat_dim);
        self.pool
            .alive_ids()
            .iter()
            .map(|&i| patch_similarity(&patches, &self.pool.protos[i], self.epsilon))
            .collect()
    }

    /// Head applied to the similarity vector; no bias term.
    pub fn logits(&self, grid: &PatchGrid, feat_dim: usize) -> Result<Vec<f64>> {
        let g = self.similarity_vector(grid, feat_dim)?;
        Ok(self.logits_from_similarities(&g))
    }

    pub fn logits_from_similarities(&self, g: &[f64]) -> Vec<f64> {
        self.head
            .weights
            .iter()
            .map(|row| row.iter().zip(g).map(|(w, s)| w * s).sum())
            .collect()
    }

    /// Argmax class; ties go to the lowest index.
    pub fn predict(&self, grid: &PatchGrid, feat_dim: usize) -> Result<usize> {
        Ok(argmax(&self.logits(grid, feat_dim)?))
    }

    /// Global nearest training patch to prototype `proto_id`, ties broken
    /// by (image, patch) order. Distances are measured in prototype space.
    pub fn nearest_patch(&self, data: &FeatureDataset, proto_id: usize) -> Result<NearestPatch> {
        if data.is_empty() {
            return Err(Error::validation("nearest_patch over an empty dataset"));
        }
        self.check_compatible(data)?;
        let p = self
            .pool
            .protos
            .get(proto_id)
            .ok_or_else(|| Error::validation(format!("no prototype {proto_id}")))?;
        let mut best: Option<NearestPatch> = None;
        for (img_idx, img) in data.images.iter().enumerate() {
            for patch_idx in 0..data.patches_per_image() {
                let z = self.add_on.apply(img.patch(patch_idx, data.feat_dim));
                let d = sq_dist(&z, p).sqrt();
                let better = match best {
                    None => true,
                    Some(b) => d < b.distance,
                };
                if better {
                    best = Some(NearestPatch {
                        image: img_idx,
                        patch: patch_idx,
                        distance: d,
                    });
                }
            }
        }
        Ok(best.unwrap())
    }

    /// The `n` highest-activating (patch, prototype) pairs for one image.
    /// Each patch appears at most once, paired with its best prototype;
    /// sorted by score descending with (patch, prototype) tie-break.
    /// `n` larger than the patch count is clamped.
    pub fn top_activations(
        &self,
        grid: &PatchGrid,
        feat_dim: usize,
        n: usize,
    ) -> Result<Vec<Activation>> {
        let patches = self.transformed_patches(grid, feat_dim);
        let alive = self.pool.alive_ids();
        if alive.is_empty() {
            return Err(Error::invariant("model has no alive prototypes"));
        }
        let mut per_patch: Vec<Activation> = Vec::with_capacity(patches.len());
        for (pi, z) in patches.iter().enumerate() {
            let mut best = Activation {
                patch: pi,
                proto: alive[0],
                score: f64::NEG_INFINITY,
            };
            for &id in &alive {
                let s = single_patch_similarity(z, &self.pool.protos[id], self.epsilon);
                if s > best.score {
                    best.proto = id;
                    best.score = s;
                }
            }
            per_patch.push(best);
        }
        per_patch.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.patch.cmp(&b.patch))
                .then(a.proto.cmp(&b.proto))
        });
        per_patch.truncate(n.min(patches.len()));
        Ok(per_patch)
    }

    /// Fingerprint of the alive prototype set and head, for staleness
    /// checks on rankings computed against an older pool.
    pub fn pool_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for i in self.pool.alive_ids() {
            i.hash(&mut h);
            for v in &self.pool.protos[i] {
                v.to_bits().hash(&mut h);
            }
            for &c in &self.pool.assigned[i] {
                c.hash(&mut h);
            }
        }
        h.finish()
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Softmax with max-subtraction; companion to `predict` when
/// probabilities are wanted.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

#[derive(Serialize, Deserialize)]
struct AddOnDoc {
    enabled: bool,
    #[serde(rename = "W1")]
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    #[serde(rename = "W2")]
    w2: Vec<Vec<f64>>,
    b2: Vec<f64>,
}

/// On-disk checkpoint. Only alive prototypes are stored; merge
/// bookkeeping lives in prune logs, not checkpoints.
#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    version: u32,
    epsilon: f64,
    add_on: AddOnDoc,
    prototypes: Vec<Vec<f64>>,
    assigned: Vec<Vec<usize>>,
    head: Vec<Vec<f64>>,
}

pub fn save_model(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    let alive = model.pool.alive_ids();
    let doc = CheckpointDoc {
        version: CHECKPOINT_VERSION,
        epsilon: model.epsilon,
        add_on: AddOnDoc {
            enabled: model.add_on.enabled,
            w1: model.add_on.w1.clone(),
            b1: model.add_on.b1.clone(),
            w2: model.add_on.w2.clone(),
            b2: model.add_on.b2.clone(),
        },
        prototypes: alive
            .iter()
            .map(|&i| model.pool.protos[i].clone())
            .collect(),
        assigned: alive
            .iter()
            .map(|&i| model.pool.assigned[i].iter().cloned().collect())
            .collect(),
        head: model.head.weights.clone(),
    };
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut w, &doc)?;
    use std::io::Write;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Model> {
    let r = BufReader::new(File::open(path.as_ref())?);
    let doc: CheckpointDoc = serde_json::from_reader(r)?;
    if doc.version != CHECKPOINT_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {}",
            doc.version
        )));
    }
    let assigned: Vec<BTreeSet<usize>> = doc
        .assigned
        .into_iter()
        .map(|v| v.into_iter().collect())
        .collect();
    let pool = PrototypePool::new(doc.prototypes, assigned);
    Model::new(
        AddOn {
            enabled: doc.add_on.enabled,
            w1: doc.add_on.w1,
            b1: doc.add_on.b1,
            w2: doc.add_on.w2,
            b2: doc.add_on.b2,
        },
        pool,
        Head { weights: doc.head },
        doc.epsilon,
    )
}

#[cfg(test)]
pub(crate) use tests::simple_model;
