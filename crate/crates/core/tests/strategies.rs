use molfuse::autodiff::{Tape, Tensor};
use molfuse::dataset::TaskKind;
use molfuse::integration::{
    build_graph_triples, build_triples, fuse, triplet_term, Batch, FusionOp, Model, ModelConfig, Overrides, Sample,
    Strategy,
};
use molfuse::smiles::{corpus_smiles, Vocabulary};

fn vocab() -> Vocabulary {
    Vocabulary::build(corpus_smiles())
}

fn samples(smiles: &[&str], vocab: &Vocabulary) -> Vec<Sample> {
    smiles
        .iter()
        .enumerate()
        .map(|(i, s)| Sample::new(s, 0.3 * i as f64 - 0.5, vocab).unwrap())
        .collect()
}

fn batch_of(samples: &[Sample]) -> Batch {
    let refs: Vec<&Sample> = samples.iter().collect();
    Batch::new(&refs, 64).unwrap()
}

fn tiny(strategy: Strategy, fusion: FusionOp, vocab: &Vocabulary) -> Model {
    let mut cfg = ModelConfig::tiny(strategy, TaskKind::Regression, vocab.len());
    cfg.fusion = fusion;
    let mut m = Model::new(cfg, 11).unwrap();
    m.fit_labels(&[-0.5, -0.2, 0.4]);
    m
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

#[test]
fn every_strategy_matches_finite_differences_on_two_molecules() {
    let v = vocab();
    let s = samples(&["CC(=O)O", "c1ccncc1"], &v);
    let b = batch_of(&s);
    for strategy in Strategy::ALL {
        for fusion in FusionOp::ALL {
            let joint = matches!(strategy, Strategy::LateFusion | Strategy::Mpnn2Lm | Strategy::Lm2Mpnn);
            if !joint && fusion != FusionOp::Sum {
                continue;
            }
            let m = tiny(strategy, fusion, &v);
            let errs = m.check_gradients(&b, 6, 3).unwrap();
            for (name, e) in &errs {
                assert!(*e < 1e-4, "{strategy}/{fusion}: {name} relative error {e:e}");
            }
        }
    }
}

#[test]
fn corpus_losses_and_gradients_are_finite() {
    let v = vocab();
    let s = samples(&corpus_smiles(), &v);
    for strategy in Strategy::ALL {
        let m = tiny(strategy, FusionOp::Sum, &v);
        for one in &s {
            // Pair each molecule with its neighbour so graph contrast has a negative.
            let b = batch_of(&[one.clone(), s[0].clone()]);
            let mut tape = Tape::new();
            tape.bind_all(&m.params);
            let (loss, _) = m.loss(&mut tape, &m.params, &b, 1).unwrap();
            assert!(tape.value(loss).item().is_finite(), "{strategy} on {}", one.smiles);
            let g = tape.backward(loss).unwrap();
            for (name, grad) in tape.param_grads(&g) {
                assert!(grad.data().iter().all(|x| x.is_finite()), "{strategy}: {name}");
            }
        }
    }
}

#[test]
fn lm2mpnn_with_zero_lm_rows_is_the_mpnn_baseline() {
    let v = vocab();
    let b = batch_of(&samples(&["CC(=O)O", "c1ccccc1O", "N"], &v));
    let joint = tiny(Strategy::Lm2Mpnn, FusionOp::Sum, &v);
    let mut base_cfg = joint.config.clone();
    base_cfg.strategy = Strategy::MpnnBaseline;
    let base = Model::new(base_cfg, 0).unwrap();

    let mut tape = Tape::new();
    let zeros = tape.constant(Tensor::zeros(&[b.graphs.num_nodes(), 8]));
    let over = Overrides {
        lm_nodes: Some(zeros),
        ..Overrides::default()
    };
    let j = joint.forward_with(&mut tape, &joint.params, &b, 0, over).unwrap();
    let mut tape2 = Tape::new();
    let p = base.forward(&mut tape2, &joint.params, &b, 0).unwrap();
    assert_eq!(bits(tape.value(j.prediction)), bits(tape2.value(p.prediction)));
}

#[test]
fn mpnn2lm_with_zero_states_is_the_mean_readout_encoder() {
    let v = vocab();
    let b = batch_of(&samples(&["CC(=O)O", "C1CCCCC1", "[Na+].[Cl-]"], &v));
    let m = tiny(Strategy::Mpnn2Lm, FusionOp::Sum, &v);
    let mut tape = Tape::new();
    let zeros = tape.constant(Tensor::zeros(&[b.graphs.num_nodes(), 8]));
    let over = Overrides {
        mpnn_nodes: Some(zeros),
        ..Overrides::default()
    };
    let j = m.forward_with(&mut tape, &m.params, &b, 0, over).unwrap();

    let mut t2 = Tape::new();
    let out = m.lm().run(&mut t2, &m.params, &b.tokens).unwrap();
    let pooled = m.lm().mean_readout(&mut t2, out.output, &b.tokens).unwrap();
    let pred = m.head().forward(&mut t2, &m.params, pooled).unwrap();
    assert_eq!(bits(tape.value(j.prediction)), bits(t2.value(pred)));
}

#[test]
fn mpnn2lm_keeps_padding_invariance() {
    let v = vocab();
    let s = samples(&["CCO", "c1ccccc1C(=O)O"], &v);
    let m = tiny(Strategy::Mpnn2Lm, FusionOp::Gate, &v);
    let refs: Vec<&Sample> = s.iter().collect();
    let short = Batch::new(&refs, 64).unwrap();
    let alone = Batch::new(&refs[..1], 64).unwrap();
    let both = m.predict(&short).unwrap();
    let one = m.predict(&alone).unwrap();
    assert!((both[0] - one[0]).abs() < 1e-9);
}

#[test]
fn zero_alpha_reduces_contrast_to_prediction_loss() {
    let v = vocab();
    let b = batch_of(&samples(&["CC(=O)O", "c1ccccc1O", "CCN"], &v));
    for strategy in [Strategy::ContrastNode, Strategy::ContrastGraph] {
        let mut m = tiny(strategy, FusionOp::Sum, &v);
        m.config.contrast.alpha = 0.0;
        m.config.contrast.alpha_graph = 0.0;
        let mut tape = Tape::new();
        let (total, fwd) = m.loss(&mut tape, &m.params, &b, 4).unwrap();
        let pred = m.prediction_loss(&mut tape, fwd.prediction, &b.labels).unwrap();
        assert!(fwd.contrast.is_some());
        assert_eq!(tape.value(total).item().to_bits(), tape.value(pred).item().to_bits());
    }
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).to_vec()).collect()
}

#[test]
fn node_contrast_total_matches_an_independent_sum() {
    let v = vocab();
    let b = batch_of(&samples(&["CC(=O)O", "c1ccccc1O", "C"], &v));
    let m = tiny(Strategy::ContrastNode, FusionOp::Sum, &v);
    let seed = 9;
    let mut tape = Tape::new();
    let (total, fwd) = m.loss(&mut tape, &m.params, &b, seed).unwrap();
    let got = tape.value(total).item();

    // Recompute both views outside the loss.
    let mut t2 = Tape::new();
    let out = m.lm().run(&mut t2, &m.params, &b.tokens).unwrap();
    let (nodes, _) = m.lm().extract(&mut t2, out.output, &b.tokens).unwrap();
    let mpnn = m.gnn().forward(&mut t2, &m.params, &b.graphs, None).unwrap();
    let a = rows(t2.value(nodes));
    let p = rows(t2.value(mpnn.nodes));
    let triples = build_triples(a.len(), p.len(), &b.graphs.offsets, seed, false).unwrap();
    let mut triplet = 0.0;
    for i in 0..triples.len() {
        triplet += triplet_term(
            &a[triples.anchor[i]],
            &p[triples.positive[i]],
            &p[triples.negative[i]],
            1.0,
        );
    }
    let preds: Vec<f64> = tape.value(fwd.prediction).data().to_vec();
    let mut sq = 0.0;
    for (y, yhat) in b.labels.iter().zip(&preds) {
        let t = (y - m.label_shift) / m.label_scale;
        sq += (yhat - t) * (yhat - t);
    }
    let want = sq + 0.1 * triplet;
    assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
}

#[test]
fn graph_contrast_pairs_swap_in_a_batch_of_two() {
    let t = build_graph_triples(2, 123);
    assert_eq!(t.negative, vec![1, 0]);
    let t = build_graph_triples(1, 123);
    assert!(t.is_empty());
}

#[test]
fn graph_contrast_skips_single_graph_batches() {
    let v = vocab();
    let b = batch_of(&samples(&["CCO"], &v));
    let m = tiny(Strategy::ContrastGraph, FusionOp::Sum, &v);
    let mut tape = Tape::new();
    let (_, fwd) = m.loss(&mut tape, &m.params, &b, 0).unwrap();
    assert!(fwd.contrast.is_none());
}

#[test]
fn late_fusion_sum_with_zero_mpnn_is_the_lm_head() {
    let v = vocab();
    let b = batch_of(&samples(&["CCO", "O=C=O"], &v));
    let m = tiny(Strategy::LateFusion, FusionOp::Sum, &v);
    let mut tape = Tape::new();
    let out = m.lm().run(&mut tape, &m.params, &b.tokens).unwrap();
    let (_, g) = m.lm().extract(&mut tape, out.output, &b.tokens).unwrap();
    let zero = tape.constant(Tensor::zeros(&[2, 8]));
    let fused = fuse(&mut tape, &m.params, g, zero, FusionOp::Sum, "fuse.gate").unwrap();
    let with = m.head().forward(&mut tape, &m.params, fused).unwrap();
    let without = m.head().forward(&mut tape, &m.params, g).unwrap();
    assert_eq!(bits(tape.value(with)), bits(tape.value(without)));
}

#[test]
fn concat_doubles_the_late_fusion_head() {
    let v = vocab();
    let m = tiny(Strategy::LateFusion, FusionOp::Concat, &v);
    assert_eq!(m.head().in_width, 16);
    assert_eq!(m.params.get("head.1.w").unwrap().shape(), &[16, 8]);
    let m = tiny(Strategy::LateFusion, FusionOp::Gate, &v);
    assert_eq!(m.head().in_width, 8);
    assert!(m.params.get("fuse.gate.w").is_some());
}

#[test]
fn misaligned_batches_are_rejected() {
    let v = vocab();
    let mut s = samples(&["CCO"], &v);
    s[0].graph = molfuse::smiles::parse("CC").unwrap();
    assert!(Batch::new(&[&s[0]], 64).is_err());
}

#[test]
fn mismatched_widths_are_rejected() {
    let v = vocab();
    let mut cfg = ModelConfig::tiny(Strategy::LateFusion, TaskKind::Regression, v.len());
    cfg.gnn.hidden_dim = 4;
    assert!(Model::new(cfg, 0).is_err());
}

#[test]
fn classification_predictions_are_probabilities() {
    let v = vocab();
    let s = samples(&["CCO", "c1ccccc1"], &v);
    let cfg = ModelConfig::tiny(Strategy::MpnnBaseline, TaskKind::BinaryClassification, v.len());
    let m = Model::new(cfg, 2).unwrap();
    for p in m.predict(&batch_of(&s)).unwrap() {
        assert!((0.0..=1.0).contains(&p));
    }
}

#[test]
fn unused_param_store_entries_do_not_matter() {
    let v = vocab();
    let b = batch_of(&samples(&["CCO", "CN"], &v));
    let m = tiny(Strategy::MpnnBaseline, FusionOp::Sum, &v);
    let mut extra = m.params.clone();
    extra.insert("unrelated.w", Tensor::zeros(&[2, 2]));
    let mut t1 = Tape::new();
    let mut t2 = Tape::new();
    let a = m.forward(&mut t1, &m.params, &b, 0).unwrap();
    let c = m.forward(&mut t2, &extra, &b, 0).unwrap();
    assert_eq!(bits(t1.value(a.prediction)), bits(t2.value(c.prediction)));
}
