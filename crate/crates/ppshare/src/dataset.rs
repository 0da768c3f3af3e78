//! Patch-feature datasets: the stand-in for convolutional feature maps.
//!
//! A dataset is a list of labeled patch grids, all sharing the same
//! `H x W` layout and feature dimension `D`. Values are stored as
//! little-endian `f32` on disk (PFM format) and widened to `f64` for
//! every computation.

use std::collections::hash_map::DefaultHasher;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const PFM_MAGIC: [u8; 4] = *b"PPSF";
const PFM_VERSION: u32 = 1;

/// One labeled image: an `H x W` grid of `D`-dimensional patch vectors.
///
/// Patches are stored flat, patch-major (row-major over the grid), then
/// feature index.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub label: usize,
    pub patches: Vec<f32>,
}

impl PatchGrid {
    pub fn new(label: usize, patches: Vec<f32>) -> Self {
        PatchGrid { label, patches }
    }

    /// Patch `idx` as a feature slice of length `feat_dim`.
    pub fn patch(&self, idx: usize, feat_dim: usize) -> &[f32] {
        &self.patches[idx * feat_dim..(idx + 1) * feat_dim]
    }
}

/// Labeled collection of patch grids with uniform dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDataset {
    pub images: Vec<PatchGrid>,
    pub num_classes: usize,
    pub feat_dim: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl FeatureDataset {
    pub fn new(
        images: Vec<PatchGrid>,
        num_classes: usize,
        feat_dim: usize,
        grid_h: usize,
        grid_w: usize,
    ) -> Result<Self> {
        let d = FeatureDataset {
            images,
            num_classes,
            feat_dim,
            grid_h,
            grid_w,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn patches_per_image(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Checks structural invariants: label range, uniform grid sizes,
    /// finite values.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::validation("num_classes must be >= 1"));
        }
        if self.feat_dim == 0 || self.grid_h == 0 || self.grid_w == 0 {
            return Err(Error::validation("H, W, D must all be >= 1"));
        }
        let expected = self.patches_per_image() * self.feat_dim;
        for (i, img) in self.images.iter().enumerate() {
            if img.label >= self.num_classes {
                return Err(Error::validation(format!(
                    "image {i}: label {} out of range [0, {})",
                    img.label, self.num_classes
                )));
            }
            if img.patches.len() != expected {
                return Err(Error::validation(format!(
                    "image {i}: {} values, expected {expected}",
                    img.patches.len()
                )));
            }
            if img.patches.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "image {i}: non-finite feature value"
                )));
            }
        }
        Ok(())
    }

    /// Number of images per class label.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes];
        for img in &self.images {
            counts[img.label] += 1;
        }
        counts
    }

    /// Errors unless every class label occurs at least once.
    pub fn require_all_classes(&self) -> Result<()> {
        if let Some(k) = self.class_counts().iter().position(|&c| c == 0) {
            return Err(Error::validation(format!("class {k} has no images")));
        }
        Ok(())
    }

    /// Stable content fingerprint used for staleness checks on cached
    /// rankings and response profiles.
    pub fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        (
            self.images.len(),
            self.num_classes,
            self.feat_dim,
            self.grid_h,
            self.grid_w,
        )
            .hash(&mut h);
        for img in &self.images {
            img.label.hash(&mut h);
            for v in &img.patches {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| map_truncation(e, "header or record"))?;
    Ok(u32::from_le_bytes(buf))
}

fn map_truncation(e: std::io::Error, what: &str) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::corruption(format!("file truncated while reading {what}"))
    } else {
        Error::Io(e)
    }
}

/// Reads a PFM file.
///
/// Layout, all little-endian: magic `PPSF`, u32 version, u32 N, u32 K,
/// u32 H, u32 W, u32 D, then N records of `[u32 label][H*W*D f32]`.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<FeatureDataset> {
    let mut r = BufReader::new(File::open(path.as_ref())?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| map_truncation(e, "magic"))?;
    if magic != PFM_MAGIC {
        return Err(Error::format(format!(
            "bad magic {magic:?}, expected {PFM_MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != PFM_VERSION {
        return Err(Error::format(format!(
            "unsupported version {version}, expected {PFM_VERSION}"
        )));
    }
    let n = read_u32(&mut r)? as usize;
    let k = read_u32(&mut r)? as usize;
    let h = read_u32(&mut r)? as usize;
    let w = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;

    let per_image = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(d))
        .ok_or_else(|| Error::corruption("grid dimensions overflow"))?;

    let mut images = Vec::with_capacity(n);
    let mut payload = vec![0u8; per_image * 4];
    for i in 0..n {
        let label = read_u32(&mut r)? as usize;
        r.read_exact(&mut payload)
            .map_err(|e| map_truncation(e, &format!("record {i}")))?;
        let patches: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        images.push(PatchGrid::new(label, patches));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::corruption("trailing bytes after final record"));
    }

    FeatureDataset::new(images, k, d, h, w)
}

/// Writes a PFM file; `load_dataset` reads it back bit-exactly.
pub fn save_dataset(data: &FeatureDataset, path: impl AsRef<Path>) -> Result<()> {
    data.validate()?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(&PFM_MAGIC)?;
    for v in [
        PFM_VERSION,
        data.images.len() as u32,
        data.num_classes as u32,
        data.grid_h as u32,
        data.grid_w as u32,
        data.feat_dim as u32,
    ] {
        w.write_all(&v.to_le_bytes())?;
    }
    for img in &data.images {
        w.write_all(&(img.label as u32).to_le_bytes())?;
        for v in &img.patches {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parameters for the synthetic generator.
///
/// Classes draw their patches from Gaussian clusters. `shared_clusters`
/// of those clusters are each assigned to a pair of classes, so merges
/// that identify the shared semantics exist by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    #[serde(rename = "K")]
    pub num_classes: usize,
    #[serde(rename = "D")]
    pub feat_dim: usize,
    #[serde(rename = "H")]
    pub grid_h: usize,
    #[serde(rename = "W")]
    pub grid_w: usize,
    /// Training images generated per class.
    pub images_per_class: usize,
    pub clusters_per_class: usize,
    pub shared_clusters: usize,
    pub cluster_sigma: f64,
    /// Validation images per class; defaults to a quarter of
    /// `images_per_class`, at least one.
    #[serde(default)]
    pub val_images_per_class: Option<usize>,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation("K must be >= 2"));
        }
        if self.feat_dim < 1 {
            return Err(Error::validation("D must be >= 1"));
        }
        if self.grid_h < 1 || self.grid_w < 1 {
            return Err(Error::validation("H and W must be >= 1"));
        }
        if self.images_per_class < 1 {
            return Err(Error::validation("images_per_class must be >= 1"));
        }
        if self.clusters_per_class < 1 {
            return Err(Error::validation("clusters_per_class must be >= 1"));
        }
        if 2 * self.shared_clusters > self.num_classes {
            return Err(Error::validation(
                "shared_clusters too large: each shared cluster pairs two distinct classes",
            ));
        }
        if self.grid_h * self.grid_w < self.clusters_per_class {
            return Err(Error::validation(
                "grid too small: need H*W >= clusters_per_class so every cluster appears per image",
            ));
        }
        if !(self.cluster_sigma.is_finite() && self.cluster_sigma >= 0.0) {
            return Err(Error::validation("cluster_sigma must be finite and >= 0"));
        }
        Ok(())
    }

    fn val_count(&self) -> usize {
        self.val_images_per_class
            .unwrap_or_else(|| (self.images_per_class / 4).max(1))
    }
}

/// One planted cluster: its mean and the classes that draw from it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlantedCluster {
    pub id: usize,
    pub mean: Vec<f64>,
    pub classes: Vec<usize>,
}

/// Ground truth recorded next to a synthetic dataset, for oracles.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RedundancyPlan {
    pub clusters: Vec<PlantedCluster>,
    /// Cluster ids per class, shared clusters first.
    pub class_clusters: Vec<Vec<usize>>,
    pub sigma: f64,
}

/// Generates `(train, val, plan)` deterministically from `(spec, seed)`.
///
/// Shared cluster `s` is assigned to classes `2s` and `2s+1`. Cluster
/// means are sampled in the unit cube with rejection to keep them at
/// least `6 * sigma` apart. Every image covers each of its class's
/// clusters at least once; remaining patches pick clusters uniformly.
pub fn synthesize(
    spec: &SynthSpec,
    seed: u64,
) -> Result<(FeatureDataset, FeatureDataset, RedundancyPlan)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut clusters: Vec<PlantedCluster> = Vec::new();
    let mut class_clusters: Vec<Vec<usize>> = vec![Vec::new(); spec.num_classes];

    let min_sep = 6.0 * spec.cluster_sigma;
    let sample_mean = |rng: &mut ChaCha8Rng, existing: &[PlantedCluster]| -> Vec<f64> {
        for _ in 0..100 {
            let m: Vec<f64> = (0..spec.feat_dim).map(|_| rng.random::<f64>()).collect();
            let ok = existing.iter().all(|c| {
                let d2: f64 = c.mean.iter().zip(&m).map(|(a, b)| (a - b) * (a - b)).sum();
                d2.sqrt() >= min_sep
            });
            if ok {
                return m;
            }
        }
        // Separation not achievable at this sigma/D; fall back to the
        // last sample rather than looping forever.
        (0..spec.feat_dim).map(|_| rng.random::<f64>()).collect()
    };

    for s in 0..spec.shared_clusters {
        let mean = sample_mean(&mut rng, &clusters);
        let id = clusters.len();
        let owners = vec![2 * s, 2 * s + 1];
        for &k in &owners {
            class_clusters[k].push(id);
        }
        clusters.push(PlantedCluster {
            id,
            mean,
            classes: owners,
        });
    }
    for k in 0..spec.num_classes {
        let exclusive =
            spec.clusters_per_class - class_clusters[k].len().min(spec.clusters_per_class);
        for _ in 0..exclusive {
            let mean = sample_mean(&mut rng, &clusters);
            let id = clusters.len();
            class_clusters[k].push(id);
            clusters.push(PlantedCluster {
                id,
                mean,
                classes: vec![k],
            });
        }
    }

    let noise = Normal::new(0.0, spec.cluster_sigma)
        .map_err(|e| Error::validation(format!("bad sigma: {e}")))?;
    let per_image = spec.grid_h * spec.grid_w;

    let gen_image = |rng: &mut ChaCha8Rng, class: usize| -> PatchGrid {
        let ids = &class_clusters[class];
        let mut patches = Vec::with_capacity(per_image * spec.feat_dim);
        for p in 0..per_image {
            let cid = if p < ids.len() {
                ids[p]
            } else {
                ids[rng.random_range(0..ids.len())]
            };
            let mean = &clusters[cid].mean;
            for dim in 0..spec.feat_dim {
                let v = mean[dim] + noise.sample(rng);
                patches.push(v as f32);
            }
        }
        PatchGrid::new(class, patches)
    };

    let mut train_images = Vec::new();
    for k in 0..spec.num_classes {
        for _ in 0..spec.images_per_class {
            train_images.push(gen_image(&mut rng, k));
        }
    }
    let mut val_images = Vec::new();
    for k in 0..spec.num_classes {
        for _ in 0..spec.val_count() {
            val_images.push(gen_image(&mut rng, k));
        }
    }

    let train = FeatureDataset::new(
        train_images,
        spec.num_classes,
        spec.feat_dim,
        spec.grid_h,
        spec.grid_w,
    )?;
    let val = FeatureDataset::new(
        val_images,
        spec.num_classes,
        spec.feat_dim,
        spec.grid_h,
        spec.grid_w,
    )?;
    train.require_all_classes()?;
    val.require_all_classes()?;

    let plan = RedundancyPlan {
        clusters,
        class_clusters,
        sigma: spec.cluster_sigma,
    };
    Ok((train, val, plan))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_dataset() -> FeatureDataset {
        FeatureDataset::new(
            vec![
                PatchGrid::new(0, vec![0.25, -1.5]),
                PatchGrid::new(1, vec![3.0, 0.5]),
            ],
            2,
            2,
            1,
            1,
        )
        .unwrap()
    }

    fn spec_k2() -> SynthSpec {
        SynthSpec {
            num_classes: 2,
            feat_dim: 4,
            grid_h: 2,
            grid_w: 2,
            images_per_class: 6,
            clusters_per_class: 2,
            shared_clusters: 1,
            cluster_sigma: 0.05,
            val_images_per_class: None,
        }
    }

    #[test]
    fn smallest_legal_file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.pfm");
        let d = tiny_dataset();
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(d, back);
        assert_eq!(back.len(), 2);
        assert_eq!(back.patches_per_image(), 1);
    }

    #[test]
    fn round_trip_is_bit_exact_on_awkward_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bits.pfm");
        let d = FeatureDataset::new(
            vec![PatchGrid::new(
                0,
                vec![f32::MIN_POSITIVE, -0.0, 1e-38, 3.4e38, 1.0 / 3.0, -7.25],
            )],
            1,
            3,
            1,
            2,
        )
        .unwrap();
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        for (a, b) in d.images[0].patches.iter().zip(&back.images[0].patches) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn paper_scale_grid_round_trips() {
        // 7x7 grid of 256-dim patches.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("big.pfm");
        let vals: Vec<f32> = (0..7 * 7 * 256).map(|i| (i as f32).sin()).collect();
        let d = FeatureDataset::new(vec![PatchGrid::new(0, vals)], 1, 256, 7, 7).unwrap();
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn empty_dataset_is_a_valid_header_only_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.pfm");
        let d = FeatureDataset::new(Vec::new(), 3, 8, 2, 2).unwrap();
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.num_classes, 3);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 4 + 6 * 4);
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00").unwrap();
        match load_dataset(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_version_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v9.pfm");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PPSF");
        for v in [9u32, 0, 1, 1, 1, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        match load_dataset(&path) {
            Err(Error::Format(_)) => {}
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_corruption_error() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.pfm");
        let bad = dir.path().join("trunc.pfm");
        let d = FeatureDataset::new(
            vec![
                PatchGrid::new(0, vec![1.0, 2.0]),
                PatchGrid::new(1, vec![3.0, 4.0]),
                PatchGrid::new(1, vec![5.0, 6.0]),
            ],
            2,
            2,
            1,
            1,
        )
        .unwrap();
        save_dataset(&d, &good).unwrap();
        let bytes = std::fs::read(&good).unwrap();
        std::fs::write(&bad, &bytes[..bytes.len() - 5]).unwrap();
        match load_dataset(&bad) {
            Err(Error::Corruption(_)) => {}
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn trailing_bytes_are_a_corruption_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("extra.pfm");
        save_dataset(&tiny_dataset(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        match load_dataset(&path) {
            Err(Error::Corruption(_)) => {}
            other => panic!("expected corruption error, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_label_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("label.pfm");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PPSF");
        for v in [1u32, 1, 2, 1, 1, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&5u32.to_le_bytes()); // label 5 >= K=2
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match load_dataset(&path) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_value_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nan.pfm");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"PPSF");
        for v in [1u32, 1, 1, 1, 1, 1] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Validation(_))));
    }

    #[test]
    fn synthesize_is_deterministic() {
        let spec = spec_k2();
        let (t1, v1, p1) = synthesize(&spec, 42).unwrap();
        let (t2, v2, p2) = synthesize(&spec, 42).unwrap();
        assert_eq!(t1, t2);
        assert_eq!(v1, v2);
        assert_eq!(
            serde_json::to_string(&p1).unwrap(),
            serde_json::to_string(&p2).unwrap()
        );
        let (t3, _, _) = synthesize(&spec, 43).unwrap();
        assert_ne!(t1, t3);
    }

    #[test]
    fn shared_cluster_feeds_both_classes() {
        let spec = spec_k2();
        let (train, _, plan) = synthesize(&spec, 0).unwrap();
        assert_eq!(plan.clusters[0].classes, vec![0, 1]);
        // Every image leads with its class's cluster list, shared first,
        // so patch 0 of every image comes from the shared cluster.
        let shared_mean = &plan.clusters[0].mean;
        for img in &train.images {
            let patch = img.patch(0, spec.feat_dim);
            let d2: f64 = patch
                .iter()
                .zip(shared_mean)
                .map(|(a, b)| (*a as f64 - b) * (*a as f64 - b))
                .sum();
            assert!(
                d2.sqrt() < 6.0 * spec.cluster_sigma,
                "patch 0 of a class-{} image is far from the shared cluster",
                img.label
            );
        }
    }

    #[test]
    fn synthesize_rejects_bad_specs() {
        let mut spec = spec_k2();
        spec.num_classes = 1;
        assert!(matches!(synthesize(&spec, 0), Err(Error::Validation(_))));
        let mut spec = spec_k2();
        spec.feat_dim = 0;
        assert!(matches!(synthesize(&spec, 0), Err(Error::Validation(_))));
        let mut spec = spec_k2();
        spec.shared_clusters = 2; // needs 4 classes
        assert!(matches!(synthesize(&spec, 0), Err(Error::Validation(_))));
    }

    /// Planted-cluster oracle: classify an image by voting each patch for
    /// the owners of its nearest cluster mean. Independent of the model
    /// code; exercises only the generator's ground truth.
    fn oracle_accuracy(data: &FeatureDataset, plan: &RedundancyPlan) -> f64 {
        let mut correct = 0usize;
        for img in &data.images {
            let mut votes = vec![0usize; data.num_classes];
            for p in 0..data.patches_per_image() {
                let patch = img.patch(p, data.feat_dim);
                let nearest = plan
                    .clusters
                    .iter()
                    .min_by(|a, b| {
                        let da: f64 = a
                            .mean
                            .iter()
                            .zip(patch)
                            .map(|(m, v)| (m - *v as f64).powi(2))
                            .sum();
                        let db: f64 = b
                            .mean
                            .iter()
                            .zip(patch)
                            .map(|(m, v)| (m - *v as f64).powi(2))
                            .sum();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap();
                for &k in &nearest.classes {
                    votes[k] += 1;
                }
            }
            let pred = votes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .unwrap()
                .0;
            if pred == img.label {
                correct += 1;
            }
        }
        correct as f64 / data.images.len() as f64
    }

    #[test]
    fn planted_cluster_oracle_recovers_labels() {
        let spec = SynthSpec {
            num_classes: 10,
            feat_dim: 8,
            grid_h: 3,
            grid_w: 3,
            images_per_class: 40,
            clusters_per_class: 3,
            shared_clusters: 3,
            cluster_sigma: 0.07,
            val_images_per_class: None,
        };
        let (train, val, plan) = synthesize(&spec, 0).unwrap();
        assert!(oracle_accuracy(&train, &plan) > 0.95);
        assert!(oracle_accuracy(&val, &plan) > 0.95);
    }
}
