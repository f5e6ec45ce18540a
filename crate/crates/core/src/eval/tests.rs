use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::graph::{synth_dynamic_sbm, SbmConfig, Snapshot};
use crate::tensor::Tensor;

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        for (j, &sj) in scores.iter().enumerate() {
            if labels[i] && !labels[j] {
                den += 1.0;
                num += if si > sj {
                    1.0
                } else if si == sj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    num / den
}

#[test]
fn auc_examples() {
    let y = [false, false, true, true];
    assert_eq!(roc_auc(&[0.1, 0.2, 0.3, 0.4], &y).unwrap(), 1.0);
    assert_eq!(roc_auc(&[1.0; 4], &y).unwrap(), 0.5);
    assert!(matches!(
        roc_auc(&[0.1, 0.2], &[true, true]),
        Err(Error::UndefinedMetric(_))
    ));
    let s = [0.3, 0.1, 0.3, 0.8, 0.5, 0.1];
    let y = [true, false, false, true, false, true];
    assert_eq!(roc_auc(&s, &y).unwrap(), brute_auc(&s, &y));
}

proptest! {
    #[test]
    fn auc_matches_pair_enumeration(
        pts in prop::collection::vec((0u8..6, any::<bool>()), 2..=8)
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0 as f64).collect();
        let labels: Vec<bool> = pts.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        prop_assert_eq!(roc_auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
    }

    #[test]
    fn auc_invariant_under_monotone_maps(
        pts in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..=20)
    ) {
        let scores: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let labels: Vec<bool> = pts.iter().map(|p| p.1).collect();
        prop_assume!(labels.iter().any(|&y| y) && labels.iter().any(|&y| !y));
        let a = roc_auc(&scores, &labels).unwrap();
        let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.5).exp() + 3.0).collect();
        prop_assert_eq!(a, roc_auc(&mapped, &labels).unwrap());
        let distinct: BTreeSet<u64> = scores.iter().map(|s| s.to_bits()).collect();
        if distinct.len() == scores.len() {
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            prop_assert!((a + roc_auc(&neg, &labels).unwrap() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn mean_std_is_population() {
    let (m, s) = mean_std(&[1.0, 3.0]);
    assert_eq!(m, 2.0);
    assert_eq!(s, 1.0);
}

#[test]
fn separable_data_is_ranked_perfectly() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 / 10.0 - 1.0]).collect();
    let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
    let m = train_logreg(&x, &y, 1e-4, 100).unwrap();
    let s: Vec<f64> = x.iter().map(|r| m.decision(r)).collect();
    assert_eq!(roc_auc(&s, &y).unwrap(), 1.0);
}

#[test]
fn single_class_is_degenerate() {
    let x = vec![vec![1.0], vec![2.0]];
    assert!(matches!(
        train_logreg(&x, &[true, true], 1e-2, 10),
        Err(Error::DegenerateData(_))
    ));
}

/// Plain gradient descent on the same objective, as an independent solver.
fn gradient_descent(x: &[Vec<f64>], y: &[bool], l2: f64) -> (Vec<f64>, f64) {
    let d = x[0].len();
    let n = x.len() as f64;
    let (mut w, mut b) = (vec![0.0; d], 0.0);
    for _ in 0..200_000 {
        let mut gw = vec![0.0; d];
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let z = b + w.iter().zip(xi).map(|(a, c)| a * c).sum::<f64>();
            let r = 1.0 / (1.0 + (-z).exp()) - if yi { 1.0 } else { 0.0 };
            for j in 0..d {
                gw[j] += r * xi[j] / n;
            }
            gb += r / n;
        }
        let mut norm = gb * gb;
        for j in 0..d {
            gw[j] += l2 * w[j];
            norm += gw[j] * gw[j];
        }
        if norm.sqrt() < 1e-10 {
            break;
        }
        for j in 0..d {
            w[j] -= 0.5 * gw[j];
        }
        b -= 0.5 * gb;
    }
    (w, b)
}

#[test]
fn logreg_matches_independent_solver() {
    let x = vec![
        vec![0.5, 1.2],
        vec![-0.3, 0.8],
        vec![1.5, -0.4],
        vec![0.1, 0.1],
        vec![-1.2, -0.7],
        vec![0.9, 0.6],
        vec![-0.5, 1.5],
        vec![0.3, -1.1],
    ];
    let y = [true, false, true, false, false, true, true, false];
    for l2 in [1e-2, 0.1, 1.0] {
        let m = train_logreg(&x, &y, l2, 100).unwrap();
        assert!(m.converged);
        let (w, b) = gradient_descent(&x, &y, l2);
        for (a, e) in m.weights.iter().zip(&w) {
            assert!((a - e).abs() < 1e-4, "{l2}: {a} vs {e}");
        }
        assert!((m.bias - b).abs() < 1e-4);
    }
}

#[test]
fn shuffled_labels_give_chance_auc() {
    let mut aucs = Vec::new();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = |n: usize| -> (Vec<Vec<f64>>, Vec<bool>) {
            let x = (0..n)
                .map(|_| (0..4).map(|_| rng.random::<f64>() - 0.5).collect())
                .collect();
            let y = (0..n).map(|i| i % 2 == 0).collect();
            (x, y)
        };
        let (xt, yt) = gen(300);
        let (xs, ys) = gen(300);
        let m = train_logreg(&xt, &yt, 1e-2, 100).unwrap();
        let s: Vec<f64> = xs.iter().map(|r| m.decision(r)).collect();
        aucs.push(roc_auc(&s, &ys).unwrap());
    }
    let (mean, _) = mean_std(&aucs);
    assert!((mean - 0.5).abs() < 0.1, "{mean}");
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

#[test]
fn unobserved_links_examples() {
    let e = [(0, 1, 1.0), (1, 2, 1.0)];
    let s = Snapshot::from_edges(4, e).unwrap();
    let g = DynamicGraph::new(ids(4), vec![s.clone(), s.clone()]).unwrap();
    assert!(unobserved_links(&g, 0, 1).unwrap().is_empty());
    let next = Snapshot::from_edges(4, e.into_iter().chain([(2, 3, 1.0)])).unwrap();
    let g = DynamicGraph::new(ids(4), vec![s.clone(), next]).unwrap();
    assert_eq!(unobserved_links(&g, 0, 1).unwrap(), vec![(2, 3)]);
    assert!(unobserved_links(&g, 1, 1).is_err());
}

fn random_graph(n: usize, snapshots: usize, p: f64, seed: u64) -> DynamicGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let snaps = (0..snapshots)
        .map(|_| {
            let mut edges = Vec::new();
            for u in 0..n {
                for v in u + 1..n {
                    if rng.random_bool(p) {
                        edges.push((u, v, 1.0));
                    }
                }
            }
            Snapshot::from_edges(n, edges).unwrap()
        })
        .collect();
    DynamicGraph::new(ids(n), snaps).unwrap()
}

#[test]
fn unobserved_links_match_set_arithmetic() {
    for seed in 0..5 {
        let g = random_graph(20, 5, 0.2, seed);
        for l in 1..=3 {
            let t = 3;
            let next: BTreeSet<Link> = g.snapshot(t + 1).edges().map(|(e, _)| e).collect();
            let mut seen = BTreeSet::new();
            for s in (t + 1).saturating_sub(l)..=t {
                seen.extend(g.snapshot(s).edges().map(|(e, _)| e));
            }
            let expect: Vec<Link> = next.difference(&seen).copied().collect();
            assert_eq!(unobserved_links(&g, t, l).unwrap(), expect);
        }
    }
}

#[test]
fn partition_sizes_follow_rule() {
    assert_eq!(partition_sizes(200), (40, 96, 64));
    for n in 50..=500 {
        let (v, tr, te) = partition_sizes(n);
        assert_eq!(v, (0.2 * n as f64).round() as usize);
        assert_eq!(tr, (0.6 * (n - v) as f64).round() as usize);
        assert_eq!(v + tr + te, n);
    }
}

#[test]
fn split_is_balanced_disjoint_and_clean() {
    for seed in 0..5 {
        let g = random_graph(20, 4, 0.15, seed);
        let t = 2;
        let links = unobserved_links(&g, t, 2).unwrap();
        if links.len() < MIN_LINKS {
            continue;
        }
        let cands = g.snapshot(t + 1).nodes().to_vec();
        let split = build_split(&links, &g, t, 2, &cands, seed).unwrap();
        let n = 2 * links.len();
        let (v, tr, te) = partition_sizes(n);
        assert_eq!(
            (split.validation.len(), split.train.len(), split.test.len()),
            (v, tr, te)
        );
        let mut all = BTreeSet::new();
        for part in [&split.validation, &split.train, &split.test] {
            let pos = part.iter().filter(|l| l.label).count() as i64;
            assert!((2 * pos - part.len() as i64).abs() <= 1);
            for l in part {
                assert!(all.insert((l.u, l.v, l.label)));
            }
        }
        assert_eq!(all.len(), n);
        let positives: BTreeSet<Link> = links.iter().copied().collect();
        for &(a, b) in &split.negatives {
            assert!(!positives.contains(&(a, b)));
            for s in t - 1..=t + 1 {
                assert!(!g.snapshot(s).has_edge(a, b), "negative ({a}, {b}) observed at {s}");
            }
        }
    }
}

#[test]
fn seeds_change_negatives_only() {
    let g = random_graph(20, 4, 0.15, 11);
    let links = unobserved_links(&g, 2, 2).unwrap();
    let cands = g.snapshot(3).nodes().to_vec();
    let a = build_split(&links, &g, 2, 2, &cands, 1).unwrap();
    let b = build_split(&links, &g, 2, 2, &cands, 2).unwrap();
    assert_eq!(a.positives, b.positives);
    assert_ne!(a.negatives, b.negatives);
    assert_eq!(a, build_split(&links, &g, 2, 2, &cands, 1).unwrap());
}

#[test]
fn complete_graph_cannot_supply_negatives() {
    let n = 6;
    let sparse = Snapshot::from_edges(n, [(0, 1, 1.0)]).unwrap();
    let full: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v, 1.0))).collect();
    let g = DynamicGraph::new(ids(n), vec![sparse, Snapshot::from_edges(n, full).unwrap()]).unwrap();
    let links = unobserved_links(&g, 0, 1).unwrap();
    let cands: Vec<usize> = (0..n).collect();
    assert!(matches!(
        build_split(&links, &g, 0, 1, &cands, 0),
        Err(Error::Sampling(_))
    ));
}

fn planted_graph() -> (DynamicGraph, Vec<usize>) {
    let s = synth_dynamic_sbm(&SbmConfig {
        n: 200,
        communities: 20,
        p_in: 0.3,
        p_out: 0.0,
        snapshots: 3,
        churn: 0.8,
        seed: 2,
    })
    .unwrap();
    (s.graph, s.communities)
}

#[test]
fn community_embeddings_predict_links() {
    let (g, comm) = planted_graph();
    // one random unit vector per community
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let centers: Vec<Vec<f64>> = (0..20)
        .map(|_| {
            let v: Vec<f64> = (0..32).map(|_| rng.random::<f64>() - 0.5).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let nodes: Vec<usize> = (0..200).collect();
    let mut values = Tensor::<f64>::zeros(&[200, 32]);
    for u in 0..200 {
        values.row_mut(u).copy_from_slice(&centers[comm[u]]);
    }
    let h = NodeEmbeddings::new(nodes, values);
    let r = evaluate_step(&h, &g, 1, 2, &[0, 1, 2, 3, 4]).unwrap().unwrap();
    assert!(r.auc_mean > 0.95, "{r:?}");
    assert_eq!(r.aucs.len(), 5);
}

#[test]
fn random_embeddings_give_chance() {
    let (g, _) = planted_graph();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let values = Tensor::from_vec(&[200, 16], (0..200 * 16).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
    let h = NodeEmbeddings::new((0..200).collect(), values);
    let r = evaluate_step(&h, &g, 1, 2, &[0, 1, 2, 3, 4]).unwrap().unwrap();
    assert!((r.auc_mean - 0.5).abs() < 0.1, "{r:?}");
}

#[test]
fn sparse_step_is_skipped() {
    let s = Snapshot::from_edges(4, [(0, 1, 1.0)]).unwrap();
    let g = DynamicGraph::new(ids(4), vec![s.clone(), s]).unwrap();
    let h = NodeEmbeddings::new(vec![0, 1], Tensor::<f64>::zeros(&[2, 2]));
    assert!(evaluate_step(&h, &g, 0, 1, &[0]).unwrap().is_none());
}

#[test]
fn compression_ratios() {
    let same = compression_report(&[
        ModelCounts::new("a", vec![(1, 500)]),
        ModelCounts::new("b", vec![(1, 500)]),
    ])
    .unwrap();
    assert_eq!(same.ratio("a", "b", 1), Some(1.0));
    let r = compression_report(&[
        ModelCounts::new("teacher", vec![(1, 1_054_000), (2, 1_100_000)]),
        ModelCounts::new("student", vec![(1, 214_000), (2, 230_000)]),
    ])
    .unwrap();
    let step1 = r.ratio("student", "teacher", 1).unwrap();
    assert!((step1 - 0.203).abs() < 0.001);
    assert_eq!(step1, 214_000.0 / 1_054_000.0);
    let avg = r.average("student", "teacher").unwrap();
    assert_eq!(avg, (214_000.0 / 1_054_000.0 + 230_000.0 / 1_100_000.0) / 2.0);
    assert!(compression_report(&[ModelCounts::new("a", vec![])]).is_err());
}

#[test]
fn report_csv_layout() {
    let r = EvalReport {
        rows: vec![EvalRow {
            model: "student".into(),
            time_step: 1,
            auc_mean: 0.75,
            auc_std: 0.01,
            params: 1234,
            ratio_vs_teacher: 0.25,
        }],
    };
    assert_eq!(
        r.to_csv(),
        "model,time_step,auc_mean,auc_std,params,ratio_vs_teacher\nstudent,1,0.75,0.01,1234,0.25\n"
    );
}
