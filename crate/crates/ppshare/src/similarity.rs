//! Prototype pair similarity: response profiles over a dataset, the
//! data-dependent / data-independent / random pair rankings that drive
//! merge-pruning, and distance histograms.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::{sq_dist, Model};

/// Per-image similarity scores for every alive prototype.
///
/// `g[n][j]` is the score of image `n` against the prototype whose pool
/// id is `proto_ids[j]`. Rows follow dataset order, columns alive order,
/// so the matrix doubles as the input row layout for the head.
#[derive(Debug, Clone)]
pub struct ResponseProfile {
    pub g: Vec<Vec<f64>>,
    pub proto_ids: Vec<usize>,
    pub dataset_fp: u64,
    pub pool_fp: u64,
}

impl ResponseProfile {
    pub fn compute(model: &Model, data: &FeatureDataset) -> Result<Self> {
        model.check_compatible(data)?;
        if data.is_empty() {
            return Err(Error::validation("response profile over an empty dataset"));
        }
        let g = data
            .images
            .par_iter()
            .map(|img| model.similarity_vector(img, data.feat_dim))
            .collect::<Result<Vec<_>>>()?;
        Ok(ResponseProfile {
            g,
            proto_ids: model.pool.alive_ids(),
            dataset_fp: data.fingerprint(),
            pool_fp: model.pool_fingerprint(),
        })
    }

    pub fn num_images(&self) -> usize {
        self.g.len()
    }

    /// Column index for a pool id, if that prototype was alive when the
    /// profile was computed.
    pub fn column_of(&self, proto_id: usize) -> Option<usize> {
        self.proto_ids.iter().position(|&p| p == proto_id)
    }

    /// Errors when the profile was computed against a different pool
    /// state than the model currently holds.
    pub fn check_fresh(&self, model: &Model) -> Result<()> {
        if self.pool_fp != model.pool_fingerprint() {
            return Err(Error::invariant(
                "response profile is stale: prototype pool changed since it was computed",
            ));
        }
        Ok(())
    }
}

/// How candidate prototype pairs are ordered for merging.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Closest response profiles over the dataset merge first.
    DataDependent,
    /// Closest prototype vectors merge first.
    DataIndependent,
    /// Seeded shuffle; the control arm.
    Random,
}

impl Strategy {
    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::DataDependent => "dd",
            Strategy::DataIndependent => "di",
            Strategy::Random => "random",
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dd" | "data-dependent" => Ok(Strategy::DataDependent),
            "di" | "data-independent" => Ok(Strategy::DataIndependent),
            "random" => Ok(Strategy::Random),
            other => Err(Error::validation(format!(
                "unknown strategy '{other}' (expected dd, di, or random)"
            ))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Sum over images of the squared profile gap. This is the reciprocal of
/// the data-dependent similarity; ranking by it ascending avoids doing
/// arithmetic on infinities when two profiles coincide exactly.
pub fn dd_denominator(profile: &ResponseProfile, col_a: usize, col_b: usize) -> f64 {
    profile
        .g
        .iter()
        .map(|row| {
            let d = row[col_a] - row[col_b];
            d * d
        })
        .sum()
}

/// Data-dependent similarity itself; +inf when the profiles coincide.
pub fn dd_similarity(denominator: f64) -> f64 {
    1.0 / denominator
}

/// One candidate pair, pool ids with `a < b`. Lower key merges earlier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedPair {
    pub a: usize,
    pub b: usize,
    pub key: f64,
}

/// An ordered merge agenda over the current alive pool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRanking {
    pub strategy: Strategy,
    /// Shuffle seed; only the random strategy uses one.
    pub seed: Option<u64>,
    /// Fingerprint of the pool the ranking was computed against.
    pub pool_fp: u64,
    pub pairs: Vec<RankedPair>,
}

fn candidate_pairs(model: &Model, inter_class_only: bool) -> Vec<(usize, usize)> {
    let alive = model.pool.alive_ids();
    let mut out = Vec::new();
    for (i, &a) in alive.iter().enumerate() {
        for &b in &alive[i + 1..] {
            if inter_class_only && !model.pool.assigned[a].is_disjoint(&model.pool.assigned[b]) {
                continue;
            }
            out.push((a, b));
        }
    }
    out
}

fn sort_ranked(pairs: &mut [RankedPair]) -> Result<()> {
    if pairs.iter().any(|p| p.key.is_nan()) {
        return Err(Error::invariant("pair ranking produced a NaN key"));
    }
    pairs.sort_by(|x, y| {
        x.key
            .partial_cmp(&y.key)
            .unwrap()
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    Ok(())
}

/// Rank pairs by profile closeness. The profile must have been computed
/// against the model's current pool.
pub fn rank_pairs_dd(
    model: &Model,
    profile: &ResponseProfile,
    inter_class_only: bool,
) -> Result<PairRanking> {
    profile.check_fresh(model)?;
    let mut pairs: Vec<RankedPair> = candidate_pairs(model, inter_class_only)
        .into_iter()
        .map(|(a, b)| {
            let ca = profile.column_of(a).expect("alive proto in fresh profile");
            let cb = profile.column_of(b).expect("alive proto in fresh profile");
            RankedPair {
                a,
                b,
                key: dd_denominator(profile, ca, cb),
            }
        })
        .collect();
    sort_ranked(&mut pairs)?;
    Ok(PairRanking {
        strategy: Strategy::DataDependent,
        seed: None,
        pool_fp: model.pool_fingerprint(),
        pairs,
    })
}

/// Rank pairs by Euclidean distance between prototype vectors.
pub fn rank_pairs_di(model: &Model, inter_class_only: bool) -> Result<PairRanking> {
    let mut pairs: Vec<RankedPair> = candidate_pairs(model, inter_class_only)
        .into_iter()
        .map(|(a, b)| RankedPair {
            a,
            b,
            key: sq_dist(&model.pool.protos[a], &model.pool.protos[b]).sqrt(),
        })
        .collect();
    sort_ranked(&mut pairs)?;
    Ok(PairRanking {
        strategy: Strategy::DataIndependent,
        seed: None,
        pool_fp: model.pool_fingerprint(),
        pairs,
    })
}

/// Seeded shuffle of the candidate pairs; keys are shuffle positions.
pub fn rank_pairs_random(model: &Model, seed: u64, inter_class_only: bool) -> Result<PairRanking> {
    let mut cand = candidate_pairs(model, inter_class_only);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cand.shuffle(&mut rng);
    let pairs = cand
        .into_iter()
        .enumerate()
        .map(|(pos, (a, b))| RankedPair {
            a,
            b,
            key: pos as f64,
        })
        .collect();
    Ok(PairRanking {
        strategy: Strategy::Random,
        seed: Some(seed),
        pool_fp: model.pool_fingerprint(),
        pairs,
    })
}

/// Dispatch on strategy. `data` is required for the data-dependent
/// ranking, `seed` for the random one.
pub fn rank_pairs(
    model: &Model,
    strategy: Strategy,
    data: Option<&FeatureDataset>,
    seed: Option<u64>,
    inter_class_only: bool,
) -> Result<PairRanking> {
    match strategy {
        Strategy::DataDependent => {
            let data =
                data.ok_or_else(|| Error::validation("data-dependent ranking needs a dataset"))?;
            let profile = ResponseProfile::compute(model, data)?;
            rank_pairs_dd(model, &profile, inter_class_only)
        }
        Strategy::DataIndependent => rank_pairs_di(model, inter_class_only),
        Strategy::Random => {
            let seed = seed.ok_or_else(|| Error::validation("random ranking needs a seed"))?;
            rank_pairs_random(model, seed, inter_class_only)
        }
    }
}

/// Histogram of standardized values: shift to mean zero, scale to unit
/// (population) standard deviation, then bin equal-width over the
/// observed range.
#[derive(Debug, Clone, Serialize)]
pub struct Histogram {
    pub mean: f64,
    pub std: f64,
    /// bins + 1 edges over the standardized range
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

pub fn normalized_histogram(values: &[f64], bins: usize) -> Result<Histogram> {
    if values.len() < 2 {
        return Err(Error::validation("histogram needs at least two values"));
    }
    if bins == 0 {
        return Err(Error::validation("histogram needs at least one bin"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("histogram input has non-finite value"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std == 0.0 {
        return Err(Error::validation("histogram input has zero variance"));
    }
    let z: Vec<f64> = values.iter().map(|v| (v - mean) / std).collect();
    let lo = z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0usize; bins];
    for v in &z {
        let mut idx = ((v - lo) / width) as usize;
        if idx >= bins {
            idx = bins - 1; // top edge closes the last bin
        }
        counts[idx] += 1;
    }
    Ok(Histogram {
        mean,
        std,
        edges,
        counts,
    })
}

/// One exported ranking row. `similarity` is the inverse of the ranking
/// key and is absent when the key is zero (coincident profiles or
/// vectors), keeping the JSON form free of infinities.
#[derive(Debug, Clone, Serialize)]
pub struct RankingRow {
    pub pair_i: usize,
    pub pair_j: usize,
    pub denominator: f64,
    pub similarity: Option<f64>,
}

fn ranking_rows(ranking: &PairRanking) -> Vec<RankingRow> {
    ranking
        .pairs
        .iter()
        .map(|p| RankingRow {
            pair_i: p.a,
            pair_j: p.b,
            denominator: p.key,
            similarity: (p.key != 0.0).then(|| 1.0 / p.key),
        })
        .collect()
}

pub fn write_ranking_csv(ranking: &PairRanking, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "pair_i,pair_j,denominator,similarity")?;
    for row in ranking_rows(ranking) {
        let sim = row
            .similarity
            .map(|s| s.to_string())
            .unwrap_or_else(|| "inf".into());
        writeln!(
            w,
            "{},{},{},{}",
            row.pair_i, row.pair_j, row.denominator, sim
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_ranking_json(ranking: &PairRanking, path: impl AsRef<Path>) -> Result<()> {
    #[derive(Serialize)]
    struct Doc<'a> {
        strategy: Strategy,
        seed: Option<u64>,
        pairs: &'a [RankingRow],
    }
    let doc = Doc {
        strategy: ranking.strategy,
        seed: ranking.seed,
        pairs: &ranking_rows(ranking),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}

pub fn write_histogram_csv(hist: &Histogram, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    writeln!(w, "bin_lo,bin_hi,count")?;
    for (i, count) in hist.counts.iter().enumerate() {
        writeln!(w, "{},{},{}", hist.edges[i], hist.edges[i + 1], count)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_histogram_json(hist: &Histogram, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(hist)?;
    text.push('\n');
    std::fs::write(path.as_ref(), text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PatchGrid;
    use crate::model::{AddOn, Head, PrototypePool, DEFAULT_EPSILON};
    use std::collections::BTreeSet;

    fn model_with(protos: Vec<Vec<f64>>, assigned: Vec<Vec<usize>>, k: usize) -> Model {
        let m = protos.len();
        let head = Head {
            weights: (0..k)
                .map(|c| {
                    (0..m)
                        .map(|j| if assigned[j].contains(&c) { 1.0 } else { -0.5 })
                        .collect()
                })
                .collect(),
        };
        let pool = PrototypePool::new(
            protos,
            assigned
                .into_iter()
                .map(|v| v.into_iter().collect::<BTreeSet<_>>())
                .collect(),
        );
        Model::new(AddOn::disabled(), pool, head, DEFAULT_EPSILON).unwrap()
    }

    fn dataset_1d(values: &[(usize, f32)]) -> FeatureDataset {
        FeatureDataset::new(
            values
                .iter()
                .map(|&(label, v)| PatchGrid::new(label, vec![v]))
                .collect(),
            2,
            1,
            1,
            1,
        )
        .unwrap()
    }

    #[test]
    fn profile_matrix_matches_direct_scoring() {
        let model = model_with(vec![vec![0.0], vec![1.0]], vec![vec![0], vec![1]], 2);
        let data = dataset_1d(&[(0, 0.1), (1, 0.9), (0, 0.5)]);
        let prof = ResponseProfile::compute(&model, &data).unwrap();
        assert_eq!(prof.g.len(), 3);
        assert_eq!(prof.proto_ids, vec![0, 1]);
        for (n, img) in data.images.iter().enumerate() {
            let direct = model.similarity_vector(img, 1).unwrap();
            assert_eq!(prof.g[n], direct);
        }
    }

    #[test]
    fn dd_denominator_sums_squared_profile_gaps() {
        // Hand oracle: profiles differ by 0.5 on each of two images, so
        // the denominator is 0.25 + 0.25 = 0.5 and similarity is 2.
        let prof = ResponseProfile {
            g: vec![vec![1.0, 0.5], vec![0.5, 1.0]],
            proto_ids: vec![0, 1],
            dataset_fp: 0,
            pool_fp: 0,
        };
        let denom = dd_denominator(&prof, 0, 1);
        assert_eq!(denom, 0.5);
        assert_eq!(dd_similarity(denom), 2.0);
    }

    #[test]
    fn ranking_and_histogram_exports() {
        // protos 0 and 1 coincide, so their dd key is exactly zero and
        // the similarity column degrades to inf (csv) / null (json)
        let model = model_with(
            vec![vec![0.3], vec![0.3], vec![0.9]],
            vec![vec![0], vec![0], vec![1]],
            2,
        );
        let data = dataset_1d(&[(0, 0.2), (1, 0.8)]);
        let ranking =
            rank_pairs(&model, Strategy::DataDependent, Some(&data), None, false).unwrap();
        assert_eq!(ranking.pairs[0].key, 0.0);

        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("ranking.csv");
        write_ranking_csv(&ranking, &csv_path).unwrap();
        let csv = std::fs::read_to_string(&csv_path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "pair_i,pair_j,denominator,similarity");
        assert_eq!(lines.len(), 1 + ranking.pairs.len());
        assert_eq!(lines[1], "0,1,0,inf");

        let json_path = dir.path().join("ranking.json");
        write_ranking_json(&ranking, &json_path).unwrap();
        let doc: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
        assert_eq!(doc["strategy"], "data_dependent");
        assert!(doc["pairs"][0]["similarity"].is_null());
        assert_eq!(doc["pairs"].as_array().unwrap().len(), ranking.pairs.len());
        let second = &doc["pairs"][1];
        let denom = second["denominator"].as_f64().unwrap();
        let sim = second["similarity"].as_f64().unwrap();
        assert_eq!(sim, 1.0 / denom);

        // {0, 2} standardizes to {-1, 1}
        let hist = normalized_histogram(&[0.0, 2.0], 2).unwrap();
        let hist_csv = dir.path().join("hist.csv");
        write_histogram_csv(&hist, &hist_csv).unwrap();
        assert_eq!(
            std::fs::read_to_string(&hist_csv).unwrap(),
            "bin_lo,bin_hi,count\n-1,0,1\n0,1,1\n"
        );
        let hist_json = dir.path().join("hist.json");
        write_histogram_json(&hist, &hist_json).unwrap();
        let parsed: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(&hist_json).unwrap()).unwrap();
        assert_eq!(parsed["counts"], serde_json::json!([1, 1]));
        assert_eq!(parsed["mean"].as_f64().unwrap(), 1.0);
    }

    #[test]
    fn identical_profiles_rank_first_with_infinite_similarity() {
        // Two prototypes mirrored across the data: every patch sits on
        // the perpendicular bisector, so the squared distances agree
        // bit for bit and the profile gap is exactly zero.
        let a = 0.4f64;
        let protos = vec![
            vec![0.5 + a, 0.5],
            vec![0.5 - a, 0.5],
            vec![10.0, 10.0],
            vec![10.1, 10.0],
        ];
        let model = model_with(protos, vec![vec![0], vec![1], vec![0], vec![1]], 2);
        let data = FeatureDataset::new(
            vec![
                PatchGrid::new(0, vec![0.5, 0.1]),
                PatchGrid::new(1, vec![0.5, 0.8]),
            ],
            2,
            2,
            1,
            1,
        )
        .unwrap();
        let prof = ResponseProfile::compute(&model, &data).unwrap();
        let ranking = rank_pairs_dd(&model, &prof, false).unwrap();
        let first = ranking.pairs[0];
        assert_eq!((first.a, first.b), (0, 1));
        assert_eq!(first.key, 0.0);
        assert!(dd_similarity(first.key).is_infinite());
    }

    #[test]
    fn di_ranking_orders_by_vector_distance() {
        let model = model_with(
            vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![0.1, 0.0]],
            vec![vec![0], vec![1], vec![0]],
            2,
        );
        let ranking = rank_pairs_di(&model, false).unwrap();
        let keys: Vec<(usize, usize)> = ranking.pairs.iter().map(|p| (p.a, p.b)).collect();
        assert_eq!(keys[0], (0, 2)); // distance 0.1
        assert!((ranking.pairs[0].key - 0.1).abs() < 1e-12);
        assert!((ranking.pairs[2].key - 5.0).abs() < 1e-12); // 3-4-5 triangle
    }

    #[test]
    fn random_ranking_is_seed_deterministic_and_covers_all_pairs() {
        let model = model_with(
            (0..5).map(|i| vec![i as f64]).collect(),
            vec![vec![0], vec![0], vec![1], vec![1], vec![0]],
            2,
        );
        let r1 = rank_pairs_random(&model, 42, false).unwrap();
        let r2 = rank_pairs_random(&model, 42, false).unwrap();
        assert_eq!(r1.pairs, r2.pairs);
        assert_eq!(r1.pairs.len(), 10);
        let r3 = rank_pairs_random(&model, 43, false).unwrap();
        assert_ne!(
            r1.pairs.iter().map(|p| (p.a, p.b)).collect::<Vec<_>>(),
            r3.pairs.iter().map(|p| (p.a, p.b)).collect::<Vec<_>>()
        );
        // keys are the shuffle positions
        for (pos, p) in r1.pairs.iter().enumerate() {
            assert_eq!(p.key, pos as f64);
        }
    }

    #[test]
    fn inter_class_filter_drops_shared_class_pairs() {
        let model = model_with(
            vec![vec![0.0], vec![0.1], vec![5.0]],
            vec![vec![0], vec![0, 1], vec![1]],
            2,
        );
        let all = rank_pairs_di(&model, false).unwrap();
        assert_eq!(all.pairs.len(), 3);
        let inter = rank_pairs_di(&model, true).unwrap();
        // only (0, 2) has disjoint class sets
        assert_eq!(inter.pairs.len(), 1);
        assert_eq!((inter.pairs[0].a, inter.pairs[0].b), (0, 2));
    }

    #[test]
    fn stale_profile_is_rejected() {
        let mut model = model_with(vec![vec![0.0], vec![1.0]], vec![vec![0], vec![1]], 2);
        let data = dataset_1d(&[(0, 0.2), (1, 0.7)]);
        let prof = ResponseProfile::compute(&model, &data).unwrap();
        model.pool.protos[0][0] = 0.5;
        assert!(matches!(
            rank_pairs_dd(&model, &prof, false),
            Err(Error::Invariant(_))
        ));
    }

    #[test]
    fn dispatcher_enforces_required_inputs() {
        let model = model_with(vec![vec![0.0], vec![1.0]], vec![vec![0], vec![1]], 2);
        assert!(matches!(
            rank_pairs(&model, Strategy::DataDependent, None, None, false),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            rank_pairs(&model, Strategy::Random, None, None, false),
            Err(Error::Validation(_))
        ));
        assert!(rank_pairs(&model, Strategy::DataIndependent, None, None, false).is_ok());
    }

    #[test]
    fn histogram_standardizes_and_counts() {
        let values = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let h = normalized_histogram(&values, 3).unwrap();
        assert!((h.mean - 3.5).abs() < 1e-12);
        // population std of 1..6
        let var: f64 = values.iter().map(|v| (v - 3.5) * (v - 3.5)).sum::<f64>() / 6.0;
        assert!((h.std - var.sqrt()).abs() < 1e-12);
        assert_eq!(h.counts.iter().sum::<usize>(), 6);
        assert_eq!(h.counts, vec![2, 2, 2]);
        // standardized: mean 0, unit variance
        let z: Vec<f64> = values.iter().map(|v| (v - h.mean) / h.std).collect();
        let zm = z.iter().sum::<f64>() / z.len() as f64;
        assert!(zm.abs() < 1e-12);
        assert!((h.edges[0] - z[0]).abs() < 1e-12);
        assert!((h.edges[3] - z[5]).abs() < 1e-12);
    }

    #[test]
    fn histogram_rejects_degenerate_input() {
        assert!(normalized_histogram(&[1.0], 4).is_err());
        assert!(normalized_histogram(&[2.0, 2.0, 2.0], 4).is_err());
        assert!(normalized_histogram(&[1.0, 2.0], 0).is_err());
    }

    #[test]
    fn strategy_parses_and_round_trips() {
        for (s, want) in [
            ("dd", Strategy::DataDependent),
            ("di", Strategy::DataIndependent),
            ("random", Strategy::Random),
        ] {
            let parsed: Strategy = s.parse().unwrap();
            assert_eq!(parsed, want);
            assert_eq!(parsed.as_str(), s);
        }
        assert!("nearest".parse::<Strategy>().is_err());
    }
}
