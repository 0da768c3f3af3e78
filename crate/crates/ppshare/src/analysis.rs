//! Evaluation and interpretation tooling: accuracy with confusion
//! counts, the class-similarity graph induced by shared prototypes, the
//! patch-assignment rate, and a driver comparing pruning strategies and
//! finetuning scopes across seeds.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureDataset;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::prune::{run_prune, PruneConfig, PruneLog};
use crate::similarity::Strategy;
use crate::train::{FinetuneScope, TrainConfig};

/// Top-1 accuracy with per-class breakdown and confusion counts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// `None` for classes with no images in the data.
    pub per_class: Vec<Option<f64>>,
    /// `confusion[true_class][predicted_class]`
    pub confusion: Vec<Vec<usize>>,
}

/// Order-independent over images; parallel per image.
pub fn evaluate(model: &Model, data: &FeatureDataset) -> Result<Evaluation> {
    model.check_compatible(data)?;
    if data.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let k = model.num_classes();
    let preds = data
        .images
        .par_iter()
        .map(|img| model.predict(img, data.feat_dim))
        .collect::<Result<Vec<usize>>>()?;
    let mut confusion = vec![vec![0usize; k]; k];
    for (img, &pred) in data.images.iter().zip(&preds) {
        confusion[img.label][pred] += 1;
    }
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    let per_class = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let total: usize = row.iter().sum();
            (total > 0).then(|| confusion[i][i] as f64 / total as f64)
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / data.len() as f64,
        per_class,
        confusion,
    })
}

/// Undirected edge between two classes; `a < b`, weight is the number
/// of alive prototypes assigned to both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub a: usize,
    pub b: usize,
    pub weight: usize,
}

/// Class-similarity graph: one node per class, weighted edges counting
/// shared prototypes. Isolated nodes are kept so the class count stays
/// recoverable from every export.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassGraph {
    pub num_classes: usize,
    pub edges: Vec<GraphEdge>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GraphNodeDoc {
    id: usize,
    label: String,
}

/// JSON shape: `{nodes: [{id, label}], edges: [{a, b, weight}]}`.
#[derive(Debug, Serialize, Deserialize)]
pub struct GraphDoc {
    nodes: Vec<GraphNodeDoc>,
    edges: Vec<GraphEdge>,
}

impl ClassGraph {
    /// Symmetric lookup; 0 when no edge is present.
    pub fn weight(&self, k: usize, l: usize) -> usize {
        let (a, b) = if k <= l { (k, l) } else { (l, k) };
        self.edges
            .iter()
            .find(|e| e.a == a && e.b == b)
            .map(|e| e.weight)
            .unwrap_or(0)
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("graph class_similarity {\n");
        for k in 0..self.num_classes {
            out.push_str(&format!("  c{k} [label=\"{k}\"];\n"));
        }
        for e in &self.edges {
            out.push_str(&format!(
                "  c{} -- c{} [weight={}, penwidth={}];\n",
                e.a, e.b, e.weight, e.weight
            ));
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = GraphDoc {
            nodes: (0..self.num_classes)
                .map(|k| GraphNodeDoc {
                    id: k,
                    label: k.to_string(),
                })
                .collect(),
            edges: self.edges.clone(),
        };
        let mut s = serde_json::to_string_pretty(&doc)?;
        s.push('\n');
        Ok(s)
    }
}

/// Builds the graph from assignment-set intersections of alive
/// prototypes. No self-loops; weights of present edges are >= 1.
pub fn build_class_graph(model: &Model) -> ClassGraph {
    let k = model.num_classes();
    let mut counts = vec![vec![0usize; k]; k];
    for id in model.pool.alive_ids() {
        let set = &model.pool.assigned[id];
        for &a in set {
            for &b in set {
                if a < b {
                    counts[a][b] += 1;
                }
            }
        }
    }
    let mut edges = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            if counts[a][b] > 0 {
                edges.push(GraphEdge {
                    a,
                    b,
                    weight: counts[a][b],
                });
            }
        }
    }
    ClassGraph {
        num_classes: k,
        edges,
    }
}

/// Fraction of top-activation (patch, prototype) pairs whose prototype
/// is assigned to the image's true class. Each patch contributes only
/// its best prototype; the `n` highest such pairs per image count.
pub fn patch_assignment_rate(model: &Model, data: &FeatureDataset, n: usize) -> Result<f64> {
    model.check_compatible(data)?;
    if data.is_empty() {
        return Err(Error::validation(
            "patch assignment rate needs at least one image",
        ));
    }
    if n == 0 {
        return Err(Error::validation("need at least one activation per image"));
    }
    let (hits, total) = data
        .images
        .par_iter()
        .map(|img| -> Result<(usize, usize)> {
            let acts = model.top_activations(img, data.feat_dim, n)?;
            let hit = acts
                .iter()
                .filter(|a| model.pool.assigned[a.proto].contains(&img.label))
                .count();
            Ok((hit, acts.len()))
        })
        .try_reduce(|| (0usize, 0usize), |x, y| Ok((x.0 + y.0, x.1 + y.1)))?;
    if total == 0 {
        return Err(Error::validation("no activations collected"));
    }
    Ok(hits as f64 / total as f64)
}

/// One pruning trajectory under a strategy and seed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyCurve {
    pub strategy: Strategy,
    pub seed: u64,
    pub log: PruneLog,
}

/// Final state of a pruning run under one finetuning scope.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScopeRow {
    pub scope: FinetuneScope,
    pub seed: u64,
    pub final_pool: usize,
    pub final_train_acc: f64,
    pub final_val_acc: Option<f64>,
}

/// Strategy curves plus the finetuning-scope table, all runs starting
/// from the same checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub curves: Vec<StrategyCurve>,
    pub scope_table: Vec<ScopeRow>,
}

/// Runs pruning per (strategy, seed) and per (scope, seed), always from
/// a copy of `model`. The template's own strategy is used for the scope
/// runs; its scope is used for the strategy runs.
pub fn compare_strategies(
    model: &Model,
    train: &FeatureDataset,
    val: Option<&FeatureDataset>,
    tcfg: &TrainConfig,
    template: &PruneConfig,
    strategies: &[Strategy],
    scopes: &[FinetuneScope],
    seeds: &[u64],
) -> Result<Comparison> {
    if seeds.is_empty() {
        return Err(Error::validation("need at least one seed"));
    }
    let strategy_jobs: Vec<(Strategy, u64)> = strategies
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let curves = strategy_jobs
        .par_iter()
        .map(|&(strategy, seed)| {
            let mut m = model.clone();
            let cfg = PruneConfig {
                strategy,
                seed,
                ..template.clone()
            };
            let log = run_prune(&mut m, train, val, tcfg, &cfg)?;
            Ok(StrategyCurve {
                strategy,
                seed,
                log,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let scope_jobs: Vec<(FinetuneScope, u64)> = scopes
        .iter()
        .flat_map(|&s| seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let scope_table = scope_jobs
        .par_iter()
        .map(|&(scope, seed)| {
            let mut m = model.clone();
            let cfg = PruneConfig {
                scope,
                seed,
                ..template.clone()
            };
            let log = run_prune(&mut m, train, val, tcfg, &cfg)?;
            Ok(ScopeRow {
                scope,
                seed,
                final_pool: log.records.last().map(|r| r.pool_after).unwrap_or(0),
                final_train_acc: log.final_train_acc(),
                final_val_acc: log.final_val_acc(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(Comparison {
        curves,
        scope_table,
    })
}

/// One row per recorded step of every strategy curve.
pub fn write_comparison_csv(cmp: &Comparison, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(
        f,
        "strategy,seed,step,pool_size,pruned_fraction,train_acc,val_acc"
    )?;
    for curve in &cmp.curves {
        for r in &curve.log.records {
            let val = r.val_acc.map(|v| v.to_string()).unwrap_or_default();
            writeln!(
                f,
                "{},{},{},{},{},{},{}",
                curve.strategy.as_str(),
                curve.seed,
                r.step,
                r.pool_after,
                r.pruned_fraction,
                r.train_acc,
                val
            )?;
        }
    }
    Ok(())
}

/// One row per (scope, seed) run.
pub fn write_scope_csv(cmp: &Comparison, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "scope,seed,final_pool,final_train_acc,final_val_acc")?;
    for row in &cmp.scope_table {
        let val = row.final_val_acc.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            f,
            "{},{},{},{},{}",
            row.scope.as_str(),
            row.seed,
            row.final_pool,
            row.final_train_acc,
            val
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::PatchGrid;
    use crate::model::simple_model;

    fn data_1d(points: &[(usize, f32)], k: usize) -> FeatureDataset {
        let images = points
            .iter()
            .map(|&(label, v)| PatchGrid::new(label, vec![v]))
            .collect();
        FeatureDataset::new(images, k, 1, 1, 1).unwrap()
    }

    #[test]
    fn perfect_model_scores_one() {
        let model = simple_model(vec![vec![0.0], vec![1.0]], vec![vec![0], vec![1]], 2);
        let data = data_1d(&[(0, 0.05), (0, 0.1), (1, 0.9), (1, 0.95)], 2);
        let eval = evaluate(&model, &data).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        assert_eq!(eval.per_class, vec![Some(1.0), Some(1.0)]);
        assert_eq!(eval.confusion, vec![vec![2, 0], vec![0, 2]]);
    }

    #[test]
    fn single_wrong_image_scores_zero() {
        let model = simple_model(vec![vec![0.0], vec![1.0]], vec![vec![0], vec![1]], 2);
        let data = data_1d(&[(1, 0.05)], 2);
        let eval = evaluate(&model, &data).unwrap();
        assert_eq!(eval.accuracy, 0.0);
        assert_eq!(eval.per_class, vec![None, Some(0.0)]);
        assert_eq!(eval.confusion, vec![vec![0, 0], vec![1, 0]]);
    }

    #[test]
    fn confusion_matches_hand_count() {
        // prototypes at 0, 5, 10; nearest prototype wins
        let model = simple_model(
            vec![vec![0.0], vec![5.0], vec![10.0]],
            vec![vec![0], vec![1], vec![2]],
            3,
        );
        // class 0: 0.1 -> 0, 4.9 -> 1; class 1: 5.2 -> 1; class 2: 7.0 -> 1, 9.0 -> 2
        let data = data_1d(&[(0, 0.1), (0, 4.9), (1, 5.2), (2, 7.0), (2, 9.0)], 3);
        let eval = evaluate(&model, &data).unwrap();
        assert_eq!(
            eval.confusion,
            vec![vec![1, 1, 0], vec![0, 1, 0], vec![0, 1, 1]]
        );
        assert!((eval.accuracy - 3.0 / 5.0).abs() < 1e-15);
        assert_eq!(eval.per_class, vec![Some(0.5), Some(1.0), Some(0.5)]);
    }

    #[test]
    fn disjoint_assignments_give_edgeless_graph() {
        let model = simple_model(vec![vec![0.0], vec![1.0]], vec![vec![0], vec![1]], 2);
        let g = build_class_graph(&model);
        assert_eq!(g.num_classes, 2);
        assert!(g.edges.is_empty());
        assert_eq!(g.weight(0, 1), 0);
        // DOT still lists every node
        let dot = g.to_dot();
        assert!(dot.contains("c0 [label=\"0\"]"));
        assert!(dot.contains("c1 [label=\"1\"]"));
        assert!(!dot.contains("--"));
    }

    #[test]
    fn shared_prototype_makes_a_unit_edge() {
        let model = simple_model(vec![vec![0.0], vec![1.0]], vec![vec![0, 1], vec![1]], 2);
        let g = build_class_graph(&model);
        assert_eq!(
            g.edges,
            vec![GraphEdge {
                a: 0,
                b: 1,
                weight: 1
            }]
        );
        assert_eq!(g.weight(0, 1), 1);
        assert_eq!(g.weight(1, 0), 1);
    }

    #[test]
    fn graph_matches_brute_force_intersection_counts() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let k = 5;
        let m = 30;
        let mut assigned: Vec<Vec<usize>> = Vec::new();
        for _ in 0..m {
            let mut set: Vec<usize> = (0..k)
                .filter(|_| rng.random_range(0.0..1.0) < 0.4)
                .collect();
            if set.is_empty() {
                set.push(rng.random_range(0..k));
            }
            assigned.push(set);
        }
        // make sure every class is covered
        for cls in 0..k {
            assigned[cls].push(cls);
            assigned[cls].sort_unstable();
            assigned[cls].dedup();
        }
        let protos: Vec<Vec<f64>> = (0..m).map(|i| vec![i as f64]).collect();
        let mut model = simple_model(protos, assigned.clone(), k);
        // kill a few prototypes so the alive filter matters
        for dead in [3usize, 7, 20] {
            let col = model
                .pool
                .alive_ids()
                .iter()
                .position(|&id| id == dead)
                .unwrap();
            model.pool.alive[dead] = false;
            model.pool.merge_parent[dead] = Some((dead + 1) % m);
            // keep head consistent with the alive set
            for row in &mut model.head.weights {
                row.remove(col);
            }
        }
        model.validate().unwrap();
        let g = build_class_graph(&model);
        for a in 0..k {
            for b in 0..k {
                if a == b {
                    continue;
                }
                let oracle = (0..m)
                    .filter(|&i| model.pool.alive[i])
                    .filter(|&i| assigned[i].contains(&a) && assigned[i].contains(&b))
                    .count();
                assert_eq!(g.weight(a, b), oracle, "classes {a},{b}");
            }
        }
        // symmetry and positivity of stored edges
        for e in &g.edges {
            assert!(e.a < e.b);
            assert!(e.weight >= 1);
        }
    }

    #[test]
    fn dot_export_is_stable() {
        let model = simple_model(
            vec![vec![0.0], vec![1.0], vec![2.0]],
            vec![vec![0, 1], vec![1], vec![0, 1]],
            2,
        );
        let g = build_class_graph(&model);
        assert_eq!(
            g.to_dot(),
            "graph class_similarity {\n  c0 [label=\"0\"];\n  c1 [label=\"1\"];\n  c0 -- c1 [weight=2, penwidth=2];\n}\n"
        );
    }

    #[test]
    fn json_export_round_trips() {
        let model = simple_model(vec![vec![0.0], vec![1.0]], vec![vec![0, 1], vec![1]], 2);
        let g = build_class_graph(&model);
        let json = g.to_json().unwrap();
        let doc: GraphDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(doc.nodes.len(), 2);
        assert_eq!(doc.nodes[1].id, 1);
        assert_eq!(doc.edges, g.edges);
    }

    #[test]
    fn single_class_rate_is_one() {
        let model = simple_model(vec![vec![0.0], vec![2.0]], vec![vec![0], vec![0]], 1);
        let data = data_1d(&[(0, 0.3), (0, 1.8)], 1);
        assert_eq!(patch_assignment_rate(&model, &data, 5).unwrap(), 1.0);
    }

    #[test]
    fn adversarial_assignment_rate_is_zero() {
        // every image's best prototype belongs to the other class
        let model = simple_model(vec![vec![0.0], vec![10.0]], vec![vec![0], vec![1]], 2);
        let data = data_1d(&[(1, 0.1), (0, 9.9)], 2);
        assert_eq!(patch_assignment_rate(&model, &data, 5).unwrap(), 0.0);
    }

    #[test]
    fn rate_matches_exhaustive_enumeration() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let model = simple_model(
            vec![vec![0.2, 0.8], vec![0.9, 0.1], vec![0.5, 0.5]],
            vec![vec![0], vec![1], vec![0, 1]],
            2,
        );
        let images: Vec<PatchGrid> = (0..12)
            .map(|i| {
                let patches: Vec<f32> = (0..6).map(|_| rng.random_range(0.0..1.0)).collect();
                PatchGrid::new(i % 2, patches)
            })
            .collect();
        let data = FeatureDataset::new(images, 2, 2, 1, 3).unwrap();
        let n = 2;
        let got = patch_assignment_rate(&model, &data, n).unwrap();

        // oracle: per patch, the single best prototype by score; per
        // image, the n best such pairs; count class hits
        let mut hits = 0usize;
        let mut total = 0usize;
        for img in &data.images {
            let mut best: Vec<(f64, usize)> = Vec::new();
            for p in 0..3 {
                let z = [img.patches[2 * p] as f64, img.patches[2 * p + 1] as f64];
                let mut top = (f64::NEG_INFINITY, usize::MAX);
                for (j, proto) in model.pool.protos.iter().enumerate() {
                    let d2 = (z[0] - proto[0]).powi(2) + (z[1] - proto[1]).powi(2);
                    let s = ((d2 + 1.0) / (d2 + model.epsilon)).ln();
                    if s > top.0 {
                        top = (s, j);
                    }
                }
                best.push(top);
            }
            best.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
            for &(_, proto) in best.iter().take(n) {
                if model.pool.assigned[proto].contains(&img.label) {
                    hits += 1;
                }
                total += 1;
            }
        }
        assert_eq!(got, hits as f64 / total as f64);
    }

    #[test]
    fn comparison_runs_are_reproducible() {
        use crate::dataset::{synthesize, SynthSpec};
        use crate::train::init_model;
        use rand::SeedableRng;

        let spec = SynthSpec {
            num_classes: 3,
            feat_dim: 3,
            grid_h: 2,
            grid_w: 2,
            images_per_class: 6,
            clusters_per_class: 2,
            shared_clusters: 1,
            cluster_sigma: 0.05,
            val_images_per_class: Some(2),
        };
        let (train, val, _) = synthesize(&spec, 9).unwrap();
        let tcfg = TrainConfig {
            protos_per_class: 4,
            finetune_iters: 2,
            ..TrainConfig::default()
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let model = init_model(&train, &tcfg, &mut rng).unwrap();
        let template = PruneConfig {
            steps: 3,
            ..PruneConfig::default()
        };
        let strategies = [Strategy::DataDependent, Strategy::Random];
        let scopes = [
            FinetuneScope::HeadOnly,
            FinetuneScope::ProtosAndHead,
            FinetuneScope::All,
        ];
        let run = || {
            compare_strategies(
                &model,
                &train,
                Some(&val),
                &tcfg,
                &template,
                &strategies,
                &scopes,
                &[5, 6],
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert_eq!(a.curves.len(), 4);
        assert_eq!(a.scope_table.len(), 6);
        // every curve starts at the same unpruned pool
        for c in &a.curves {
            assert_eq!(c.log.initial_pool, 12);
            assert_eq!(c.log.records[0].pool_before, 12);
        }
        assert!(a
            .scope_table
            .iter()
            .any(|r| r.scope == FinetuneScope::HeadOnly));

        let dir = tempfile::tempdir().unwrap();
        let curves_path = dir.path().join("curves.csv");
        let scopes_path = dir.path().join("scopes.csv");
        write_comparison_csv(&a, &curves_path).unwrap();
        write_scope_csv(&a, &scopes_path).unwrap();
        let text = std::fs::read_to_string(&curves_path).unwrap();
        assert!(
            text.starts_with("strategy,seed,step,pool_size,pruned_fraction,train_acc,val_acc\n")
        );
        // step-0 rows plus one row per executed step, per curve
        assert_eq!(
            text.lines().count() - 1,
            a.curves.iter().map(|c| c.log.records.len()).sum::<usize>()
        );
        let text = std::fs::read_to_string(&scopes_path).unwrap();
        assert_eq!(text.lines().count(), 7);
    }
}
