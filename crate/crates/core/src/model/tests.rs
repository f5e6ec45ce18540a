#![allow(clippy::needless_range_loop)]

use super::*;
use crate::graph::Snapshot;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| i.to_string()).collect()
}

fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.2 * x
    }
}

/// Direct evaluation of the structural attention output of node `u`.
fn oracle_structural(snap: &Snapshot, w: &Tensor<f64>, a: &Tensor<f64>, u: usize) -> Vec<f64> {
    let dh = w.cols();
    let nbrs = snap.neighbors(u);
    let e: Vec<f64> = nbrs
        .iter()
        .map(|&(v, wt)| {
            let mut s = 0.0;
            for c in 0..dh {
                s += a.data()[c] * w.get(u, c) + a.data()[dh + c] * w.get(v, c);
            }
            leaky(wt * s)
        })
        .collect();
    let denom: f64 = e.iter().map(|x| x.exp()).sum();
    (0..dh)
        .map(|c| {
            let acc: f64 = nbrs
                .iter()
                .zip(&e)
                .map(|(&(v, _), &ev)| ev.exp() / denom * w.get(v, c))
                .sum();
            elu(acc)
        })
        .collect()
}

fn path_graph() -> DynamicGraph {
    let s = Snapshot::from_edges(3, [(0, 1, 1.0), (1, 2, 2.5)]).unwrap();
    DynamicGraph::new(ids(3), vec![s]).unwrap()
}

fn set(model: &mut AttentionModel<f64>, name: &str, values: &[f64]) {
    let key = model.params().key_of(name).unwrap();
    model.params_mut().value_mut(key).data_mut().copy_from_slice(values);
}

fn run_structural(model: &AttentionModel<f64>, snap: &Snapshot, head: usize, targets: &[usize]) -> Tensor<f64> {
    let mut tape = Tape::new();
    let z = model.structural_head(&mut tape, snap, head, targets).unwrap();
    tape.value(z).clone()
}

#[test]
fn isolated_node_attends_to_itself() {
    let s = Snapshot::from_edges(3, [(0, 1, 1.0), (2, 2, 1.0)]).unwrap();
    assert_eq!(s.neighbors(2), &[(2, 1.0)]);
    let model = AttentionModel::<f64>::new(ModelConfig::new(4, 1, 1, 1), 3, 5).unwrap();
    let z = run_structural(&model, &s, 0, &[2]);
    let w = model.params().get("structural.0.weight").unwrap();
    for c in 0..4 {
        assert!((z.get(0, c) - elu(w.get(2, c))).abs() < 1e-15);
    }
}

#[test]
fn path_graph_matches_direct_evaluation() {
    let g = path_graph();
    let mut model = AttentionModel::<f64>::new(ModelConfig::new(2, 1, 1, 1), 3, 1).unwrap();
    set(&mut model, "structural.0.weight", &[0.5, -1.0, 0.3, 0.8, -0.7, 0.2]);
    set(&mut model, "structural.0.attention", &[1.0, -0.5, 0.25, 2.0]);
    let z = run_structural(&model, g.snapshot(0), 0, &[0, 1, 2]);
    let w = model.params().get("structural.0.weight").unwrap();
    let a = model.params().get("structural.0.attention").unwrap();
    for u in 0..3 {
        let expect = oracle_structural(g.snapshot(0), w, a, u);
        for c in 0..2 {
            assert!((z.get(u, c) - expect[c]).abs() < 1e-10);
        }
    }
}

#[test]
fn edge_weights_enter_attention_scores() {
    let base = Snapshot::from_edges(4, [(0, 1, 1.0), (0, 2, 1.0), (0, 3, 0.5)]).unwrap();
    let doubled = Snapshot::from_edges(4, [(0, 1, 2.0), (0, 2, 2.0), (0, 3, 1.0)]).unwrap();
    let model = AttentionModel::<f64>::new(ModelConfig::new(3, 1, 1, 1), 4, 2).unwrap();
    let w = model.params().get("structural.0.weight").unwrap();
    let a = model.params().get("structural.0.attention").unwrap();
    let z1 = run_structural(&model, &base, 0, &[0]);
    let z2 = run_structural(&model, &doubled, 0, &[0]);
    let e1 = oracle_structural(&base, w, a, 0);
    let e2 = oracle_structural(&doubled, w, a, 0);
    for c in 0..3 {
        assert!((z1.get(0, c) - e1[c]).abs() < 1e-10);
        assert!((z2.get(0, c) - e2[c]).abs() < 1e-10);
    }
    assert_ne!(z1, z2);
}

#[test]
fn empty_neighborhood_is_contract_violation() {
    let g = path_graph();
    let model = AttentionModel::<f64>::new(ModelConfig::new(2, 1, 1, 1), 4, 1).unwrap();
    let s = Snapshot::from_edges(4, [(0, 1, 1.0)]).unwrap();
    let mut tape = Tape::new();
    assert!(matches!(
        model.structural_head(&mut tape, &s, 0, &[3]),
        Err(Error::Contract(_))
    ));
    drop(g);
}

#[test]
fn single_head_concat_is_identity() {
    let g = path_graph();
    let model = AttentionModel::<f64>::new(ModelConfig::new(4, 1, 1, 1), 3, 3).unwrap();
    let mut tape = Tape::new();
    let z = model.structural_head(&mut tape, g.snapshot(0), 0, &[0, 1, 2]).unwrap();
    let c = model
        .multi_head_structural(&mut tape, g.snapshot(0), &[0, 1, 2])
        .unwrap();
    assert_eq!(tape.value(z), tape.value(c));
}

#[test]
fn head_blocks_follow_head_order() {
    let g = path_graph();
    let model = AttentionModel::<f64>::new(ModelConfig::new(4, 1, 2, 1), 3, 4).unwrap();
    let targets = [0, 1, 2];
    let mut tape = Tape::new();
    let c = model.multi_head_structural(&mut tape, g.snapshot(0), &targets).unwrap();
    let c = tape.value(c).clone();
    assert_eq!(c.shape(), &[3, 4]);
    let z0 = run_structural(&model, g.snapshot(0), 0, &targets);
    for u in 0..3 {
        assert_eq!(&c.row(u)[..2], z0.row(u));
    }

    // swap the two heads' parameters
    let mut swapped = model.clone();
    for suffix in ["weight", "attention"] {
        let h0 = model
            .params()
            .get(&format!("structural.0.{suffix}"))
            .unwrap()
            .data()
            .to_vec();
        let h1 = model
            .params()
            .get(&format!("structural.1.{suffix}"))
            .unwrap()
            .data()
            .to_vec();
        set(&mut swapped, &format!("structural.0.{suffix}"), &h1);
        set(&mut swapped, &format!("structural.1.{suffix}"), &h0);
    }
    let mut tape = Tape::new();
    let cs = swapped
        .multi_head_structural(&mut tape, g.snapshot(0), &targets)
        .unwrap();
    let cs = tape.value(cs);
    for u in 0..3 {
        assert_eq!(&cs.row(u)[..2], &c.row(u)[2..]);
        assert_eq!(&cs.row(u)[2..], &c.row(u)[..2]);
    }
}

#[test]
fn causal_mask_shapes() {
    let m1 = temporal_mask::<f64>(1, MaskMode::Causal);
    assert_eq!(m1.data(), &[0.0]);
    let m3 = temporal_mask::<f64>(3, MaskMode::Causal);
    for i in 0..3 {
        for j in 0..3 {
            if j <= i {
                assert_eq!(m3.get(i, j), 0.0);
            } else {
                assert_eq!(m3.get(i, j), f64::NEG_INFINITY);
            }
        }
        assert!(m3.row(i).contains(&0.0));
    }
    let strict = temporal_mask::<f64>(3, MaskMode::Strict);
    assert!(strict.row(2).iter().all(|x| x.is_infinite()));
}

fn temporal_model(d: usize, l: usize, g: usize) -> AttentionModel<f64> {
    AttentionModel::new(ModelConfig::new(d, l, 1, g), 2, 17).unwrap()
}

#[test]
fn single_step_window_is_value_projection() {
    let model = temporal_model(4, 1, 1);
    let x = Tensor::<f64>::matrix(&[[0.1, -0.2, 0.3, 0.4], [1.0, 0.5, -0.5, 0.0]]);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let b = model.temporal_head(&mut tape, xv, 1, 0).unwrap();
    let expect = x.matmul(model.params().get("temporal.0.value").unwrap()).unwrap();
    for (a, e) in tape.value(b).data().iter().zip(expect.data()) {
        assert!((a - e).abs() < 1e-14);
    }
}

#[test]
fn identical_rows_give_uniform_causal_weights() {
    // With identical inputs every value row is the same, so B equals that
    // row regardless of beta; check beta itself through the softmax input.
    let model = temporal_model(4, 3, 1);
    let row = [0.3, -0.1, 0.7, 0.2];
    let x = Tensor::<f64>::matrix(&[row, row, row]);
    let wq = model.params().get("temporal.0.query").unwrap();
    let wk = model.params().get("temporal.0.key").unwrap();
    let q = x.matmul(wq).unwrap();
    let k = x.matmul(wk).unwrap();
    let mut tape = Tape::<f64>::new();
    let scores = tape.constant(q.matmul(&k.transpose()).unwrap().map(|s| s / 2.0));
    let mask = temporal_mask(3, MaskMode::Causal);
    let beta = tape.masked_softmax(scores, Some(&mask)).unwrap();
    let beta = tape.value(beta);
    for i in 0..3 {
        for j in 0..3 {
            let expect = if j <= i { 1.0 / (i + 1) as f64 } else { 0.0 };
            assert!((beta.get(i, j) - expect).abs() < 1e-15);
        }
    }
}

/// Direct evaluation of one temporal head on an `l x d` sequence.
fn oracle_temporal(x: &Tensor<f64>, wq: &Tensor<f64>, wk: &Tensor<f64>, wv: &Tensor<f64>) -> Vec<Vec<f64>> {
    let l = x.rows();
    let k = wq.cols();
    let proj = |w: &Tensor<f64>| -> Vec<Vec<f64>> {
        (0..l)
            .map(|i| {
                (0..k)
                    .map(|c| (0..x.cols()).map(|r| x.get(i, r) * w.get(r, c)).sum())
                    .collect()
            })
            .collect()
    };
    let (q, kk, v) = (proj(wq), proj(wk), proj(wv));
    (0..l)
        .map(|i| {
            let c: Vec<f64> = (0..l)
                .map(|j| {
                    let dot: f64 = (0..k).map(|r| q[i][r] * kk[j][r]).sum();
                    dot / (k as f64).sqrt() + if j <= i { 0.0 } else { f64::NEG_INFINITY }
                })
                .collect();
            let denom: f64 = c.iter().map(|x| x.exp()).sum();
            (0..k)
                .map(|col| (0..l).map(|j| c[j].exp() / denom * v[j][col]).sum())
                .collect()
        })
        .collect()
}

#[test]
fn temporal_head_matches_direct_evaluation() {
    let model = temporal_model(4, 3, 2);
    let x = Tensor::<f64>::matrix(&[
        [0.3, -1.2, 0.5, 0.9],
        [-0.4, 0.8, 1.1, -0.6],
        [0.7, 0.2, -0.9, 0.4],
        [1.0, 0.0, 0.5, -0.5],
        [0.1, 0.1, 0.1, 0.1],
        [-1.0, 2.0, 0.0, 0.3],
    ]);
    for head in 0..2 {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let b = model.temporal_head(&mut tape, xv, 3, head).unwrap();
        let b = tape.value(b);
        let p = |n: &str| model.params().get(&format!("temporal.{head}.{n}")).unwrap();
        for blk in 0..2 {
            let rows: Vec<[f64; 4]> = (0..3).map(|i| x.row(blk * 3 + i).try_into().unwrap()).collect();
            let xb = Tensor::matrix(&rows);
            let expect = oracle_temporal(&xb, p("query"), p("key"), p("value"));
            for i in 0..3 {
                for c in 0..2 {
                    assert!((b.get(blk * 3 + i, c) - expect[i][c]).abs() < 1e-10);
                }
            }
        }
    }
}

#[test]
fn temporal_heads_concatenate() {
    let model = temporal_model(8, 2, 4);
    let x = Tensor::<f64>::full(&[4, 8], 0.25);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let d = model.multi_head_temporal(&mut tape, xv, 2).unwrap();
    assert_eq!(tape.value(d).shape(), &[4, 8]);

    let single = temporal_model(4, 2, 1);
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::full(&[2, 4], 0.5));
    let b = single.temporal_head(&mut tape, xv, 2, 0).unwrap();
    let d = single.multi_head_temporal(&mut tape, xv, 2).unwrap();
    assert_eq!(tape.value(b), tape.value(d));
}

#[test]
fn zeroed_value_head_gives_zero_block() {
    let mut model = temporal_model(8, 2, 4);
    set(&mut model, "temporal.2.value", &[0.0; 16]);
    let x = Tensor::<f64>::matrix(&[
        [0.3, -1.2, 0.5, 0.9, 0.1, 0.0, 0.2, 0.3],
        [-0.4, 0.8, 1.1, -0.6, 0.5, 0.5, 0.5, 0.5],
    ]);
    let mut tape = Tape::new();
    let xv = tape.constant(x);
    let d = model.multi_head_temporal(&mut tape, xv, 2).unwrap();
    let d = tape.value(d);
    for r in 0..2 {
        assert!(d.row(r)[4..6].iter().all(|&v| v == 0.0));
        assert!(d.row(r)[..4].iter().any(|&v| v != 0.0));
    }
}

#[test]
fn parameter_count_matches_enumeration() {
    let cfg = ModelConfig {
        k: 2,
        ..ModelConfig::new(2, 2, 1, 1)
    };
    let model = AttentionModel::<f64>::new(cfg, 4, 0).unwrap();
    let enumerated: usize = model.params().params().iter().map(|p| p.value.numel()).sum();
    assert_eq!(enumerated, 28);
    assert_eq!(model.parameter_count(), 28);
    assert_eq!(cfg.parameter_count(4), 28);
}

#[test]
fn capacity_growth_is_order_independent() {
    let cfg = ModelConfig::new(4, 2, 2, 2);
    let mut grown = AttentionModel::<f64>::new(cfg, 3, 9).unwrap();
    grown.ensure_capacity(6).unwrap();
    let mut twice = AttentionModel::<f64>::new(cfg, 3, 9).unwrap();
    twice.ensure_capacity(4).unwrap();
    twice.ensure_capacity(6).unwrap();
    assert_eq!(grown.capacity(), 6);
    for name in ["structural.0.weight", "structural.1.weight"] {
        assert_eq!(grown.params().get(name), twice.params().get(name));
    }
    assert_eq!(grown.parameter_count(), cfg.parameter_count(6));
}

#[test]
fn strict_mask_fails_forward() {
    let s = Snapshot::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
    let g = DynamicGraph::new(ids(3), vec![s.clone(), s]).unwrap();
    let mut cfg = ModelConfig::new(4, 2, 1, 1);
    cfg.mask = MaskMode::Strict;
    let model = AttentionModel::<f64>::new(cfg, 3, 0).unwrap();
    assert!(matches!(
        model.embed(&g, &g.window(1, 2)),
        Err(Error::DegenerateRow { .. })
    ));
}

#[test]
fn literal_pipeline_is_structural_plus_position() {
    let s = Snapshot::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)]).unwrap();
    let g = DynamicGraph::new(ids(3), vec![s.clone(), s]).unwrap();
    let mut cfg = ModelConfig::new(4, 2, 2, 2);
    cfg.pipeline = Pipeline::Literal;
    let model = AttentionModel::<f64>::new(cfg, 3, 0).unwrap();
    let h = model.embed(&g, &g.window(1, 2)).unwrap();
    let mut tape = Tape::new();
    let c = model
        .multi_head_structural(&mut tape, g.snapshot(1), &[0, 1, 2])
        .unwrap();
    let c = tape.value(c);
    let p = model.params().get("position").unwrap();
    for u in 0..3 {
        for j in 0..4 {
            assert!((h.get(u).unwrap()[j] - (c.get(u, j) + p.get(1, j))).abs() < 1e-15);
        }
    }
}

#[test]
fn node_missing_from_window_is_lookup_error() {
    let s0 = Snapshot::from_edges(4, [(0, 1, 1.0)]).unwrap();
    let s1 = Snapshot::from_edges(4, [(1, 2, 1.0)]).unwrap();
    let g = DynamicGraph::new(ids(4), vec![s0, s1]).unwrap();
    let model = AttentionModel::<f64>::new(ModelConfig::new(4, 2, 1, 1), 4, 0).unwrap();
    let mut tape = Tape::new();
    let w = g.window(1, 2);
    assert!(model.forward_nodes(&mut tape, &g, &w, &[0, 1, 2]).is_ok());
    let mut tape = Tape::new();
    assert!(matches!(
        model.forward_nodes(&mut tape, &g, &w, &[3]),
        Err(Error::Lookup(_))
    ));
}

#[test]
fn inactive_positions_are_zero_plus_position() {
    let s0 = Snapshot::from_edges(3, [(0, 1, 1.0)]).unwrap();
    let s1 = Snapshot::from_edges(3, [(1, 2, 1.0)]).unwrap();
    let g = DynamicGraph::new(ids(3), vec![s0, s1]).unwrap();
    let model = AttentionModel::<f64>::new(ModelConfig::new(4, 2, 1, 1), 3, 0).unwrap();
    let mut tape = Tape::new();
    let x = model.temporal_input(&mut tape, &g, &g.window(1, 2), &[2]).unwrap();
    let p = model.params().get("position").unwrap();
    assert_eq!(tape.value(x).row(0), p.row(0));
}

#[test]
fn embeddings_are_finite_and_repeatable() {
    let s = Snapshot::from_edges(5, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 3.0), (3, 4, 1.0)]).unwrap();
    let g = DynamicGraph::new(ids(5), vec![s.clone(), s]).unwrap();
    let model = AttentionModel::<f64>::new(ModelConfig::new(8, 2, 2, 2), 5, 0).unwrap();
    let a = model.embed(&g, &g.window(1, 2)).unwrap();
    let b = model.embed(&g, &g.window(1, 2)).unwrap();
    assert!(a.all_finite());
    assert_eq!(a, b);
    assert_eq!(a.dim(), 8);
}

#[test]
fn checkpoint_round_trip() {
    let model = AttentionModel::<f64>::new(ModelConfig::new(4, 2, 2, 2), 3, 11).unwrap();
    let ck = model.to_checkpoint(&ids(3));
    let text = serde_json::to_string(&ck).unwrap();
    let back: Checkpoint = serde_json::from_str(&text).unwrap();
    let restored = AttentionModel::<f64>::from_checkpoint(&back).unwrap();
    for (a, b) in model.params().params().iter().zip(restored.params().params()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.value, b.value);
    }
}

fn weighted_sum_loss<'a>(tape: &mut Tape<'a, f64>, v: Var) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let n: usize = shape.iter().product();
    let r = (0..n).map(|i| ((i * 7919 % 23) as f64 - 11.0) / 7.0).collect();
    let r = tape.constant(Tensor::from_vec(&shape, r)?);
    let prod = tape.mul(v, r)?;
    tape.sum(prod)
}

fn four_node_graph() -> DynamicGraph {
    let s0 = Snapshot::from_edges(4, [(0, 1, 1.0), (1, 2, 2.0), (2, 3, 0.5), (0, 2, 1.5)]).unwrap();
    let s1 = Snapshot::from_edges(4, [(0, 1, 1.0), (1, 3, 1.0), (3, 3, 1.0)]).unwrap();
    DynamicGraph::new(ids(4), vec![s0, s1]).unwrap()
}

#[test]
fn structural_layer_gradients_match_finite_differences() {
    let g = four_node_graph();
    let model = AttentionModel::<f64>::new(ModelConfig::new(4, 1, 2, 1), 4, 21).unwrap();
    let (name, err) = crate::gradcheck::check_model(&model, 1e-5, |m, tape| {
        let c = m.multi_head_structural(tape, g.snapshot(0), &[0, 1, 2, 3])?;
        weighted_sum_loss(tape, c)
    })
    .unwrap();
    assert!(err < 1e-4, "{name}: {err}");
}

#[test]
fn full_forward_gradients_match_finite_differences() {
    let g = four_node_graph();
    let model = AttentionModel::<f64>::new(ModelConfig::new(4, 2, 2, 2), 4, 22).unwrap();
    let (name, err) = crate::gradcheck::check_model(&model, 1e-5, |m, tape| {
        let h = m.forward_nodes(tape, &g, &g.window(1, 2), &[0, 1, 2, 3])?;
        weighted_sum_loss(tape, h)
    })
    .unwrap();
    assert!(err < 1e-4, "{name}: {err}");
}
