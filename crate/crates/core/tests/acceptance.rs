//! Acceptance criteria 1-9, run in order inside a single test so that the
//! timing measurements do not compete with other tests. Each criterion prints
//! one `PASS`/`FAIL` line. A criterion whose input data cannot be obtained is
//! reported as FAIL with the reason but does not abort the suite.
//!
//! Runs for roughly 20 minutes on one core (criterion 7 trains all seven
//! strategies on ESOL).

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use molfuse::autodiff::gradcheck::run_suite;
use molfuse::autodiff::{Tape, Tensor};
use molfuse::dataset::{load_csv, TaskKind};
use molfuse::gnn::GraphBatch;
use molfuse::integration::{
    build_triples, triplet_loss, triplet_loss_chunked, triplet_term, Batch, FusionOp, Model, ModelConfig, Overrides,
    Sample, Strategy,
};
use molfuse::rng::SplitMix64;
use molfuse::smiles::{corpus_smiles, parse, tokenize, Vocabulary, CORPUS};
use molfuse::training::{
    attention_scaling, fitted_doubling_ratio, prepare, profile, train_one, RunConfig, FOOTER, SPLIT_ROWS,
};

struct Outcome {
    id: u32,
    pass: bool,
    /// The criterion could not be evaluated because its data is unavailable.
    unavailable: bool,
    detail: String,
}

fn outcome(id: u32, pass: bool, detail: String) -> Outcome {
    Outcome {
        id,
        pass,
        unavailable: false,
        detail,
    }
}

fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn esol() -> PathBuf {
    data_dir().join("esol.csv")
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

fn corpus_samples(vocab: &Vocabulary) -> Vec<Sample> {
    corpus_smiles()
        .iter()
        .enumerate()
        .map(|(i, s)| Sample::new(s, (i as f64 * 0.37).sin(), vocab).unwrap())
        .collect()
}

fn batch(samples: &[&Sample]) -> Batch {
    Batch::new(samples, 256).unwrap()
}

fn default_model(strategy: Strategy, fusion: FusionOp, vocab: &Vocabulary, seed: u64) -> Model {
    let mut cfg = ModelConfig::new(strategy, TaskKind::Regression, vocab.len());
    cfg.fusion = fusion;
    let mut m = Model::new(cfg, seed).unwrap();
    m.fit_labels(&[-1.0, 0.5, 2.0]);
    m
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let suite = run_suite(20, 1e-4, 1);
    let mut worst_op = suite.worst();
    let mut ok = suite.all_passed();

    let vocab = Vocabulary::build(corpus_smiles());
    let s: Vec<Sample> = ["CC(=O)Oc1ccccc1C(=O)O", "C1CCNCC1"]
        .iter()
        .zip([0.4, -1.1])
        .map(|(s, y)| Sample::new(s, y, &vocab).unwrap())
        .collect();
    let b = batch(&[&s[0], &s[1]]);
    let mut worst = (0.0f64, String::new());
    for strategy in Strategy::ALL {
        for fusion in FusionOp::ALL {
            let joint = matches!(strategy, Strategy::LateFusion | Strategy::Mpnn2Lm | Strategy::Lm2Mpnn);
            if !joint && fusion != FusionOp::Sum {
                continue;
            }
            let m = default_model(strategy, fusion, &vocab, 3);
            for (name, e) in m.check_gradients(&b, 4, 17).unwrap() {
                if e > worst.0 {
                    worst = (e, format!("{strategy}/{fusion} {name}"));
                }
            }
        }
    }
    ok &= worst.0 < 1e-4;
    worst_op = worst_op.max(0.0);
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 120.0;
    outcome(
        1,
        ok,
        format!(
            "{} op kinds worst {worst_op:.2e}; 7 strategies x fusions worst {:.2e} ({}); {secs:.1}s",
            suite.entries.len(),
            worst.0,
            worst.1
        ),
    )
}

fn criterion_2() -> Outcome {
    let vocab = Vocabulary::build(corpus_smiles());
    let mut corpus_ok = 0;
    for &(_, smiles, atoms, bonds, tokens) in CORPUS {
        let g = parse(smiles).unwrap();
        let t = tokenize(smiles, &vocab).unwrap();
        if g.num_atoms() == atoms && g.num_bonds() == bonds && t.len() - 1 == tokens {
            corpus_ok += 1;
        }
    }
    let phenol = parse("C1=CC=C(C=C1)O").unwrap();
    let phenol_tokens = tokenize("C1=CC=C(C=C1)O", &Vocabulary::build(["C1=CC=C(C=C1)O"])).unwrap().len() - 1;
    let phenol_ok = (phenol.num_atoms(), phenol.num_bonds(), phenol_tokens) == (7, 7, 14);

    let data = load_csv(esol(), "smiles", "measured log solubility in mols per litre", TaskKind::Regression).unwrap();
    let ev = Vocabulary::build(data.records.iter().map(|r| r.smiles.as_str()));
    let aligned = data
        .records
        .iter()
        .filter(|r| {
            let g = parse(&r.smiles).unwrap();
            let t = tokenize(&r.smiles, &ev).unwrap();
            t.atom_token_positions.len() == g.num_atoms()
        })
        .count();
    let coverage = data.records.len() as f64 / data.total_rows as f64;
    let reasons = data.quarantine.iter().all(|q| !q.reason.is_empty());
    let ok = corpus_ok == CORPUS.len() && phenol_ok && aligned == data.records.len() && coverage >= 0.95 && reasons;
    outcome(
        2,
        ok,
        format!(
            "corpus {corpus_ok}/{}; phenol 7/7/14 {phenol_ok}; ESOL parsed {}/{} ({:.1}%), aligned {aligned}/{}, quarantined {}",
            CORPUS.len(),
            data.records.len(),
            data.total_rows,
            100.0 * coverage,
            data.records.len(),
            data.quarantine.len()
        ),
    )
}

fn brute_force(a: &[Vec<f64>], p: &[Vec<f64>], n: &[Vec<f64>], margin: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..a.len() {
        let mut dp = 0.0;
        let mut dn = 0.0;
        for j in 0..a[i].len() {
            dp += (a[i][j] - p[i][j]) * (a[i][j] - p[i][j]);
            dn += (a[i][j] - n[i][j]) * (a[i][j] - n[i][j]);
        }
        let l = dp.sqrt() - dn.sqrt() + margin;
        total += if l > 0.0 { l } else { 0.0 };
    }
    total
}

fn criterion_3() -> Outcome {
    let mut rng = SplitMix64::new(2024);
    let mut exact = 0;
    let mut chunk_ok = 0;
    let batches = 100;
    for trial in 0..batches {
        let graphs = 1 + rng.below(5);
        let mut offsets = vec![0];
        for _ in 0..graphs {
            let n = 1 + rng.below(8);
            offsets.push(offsets.last().unwrap() + n);
        }
        let rows = *offsets.last().unwrap();
        let d = 1 + rng.below(12);
        let margin = 0.25 + rng.next_f64() * 1.5;
        let mat = |rng: &mut SplitMix64| {
            Tensor::new(vec![rows, d], (0..rows * d).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap()
        };
        let lm = mat(&mut rng);
        let mp = mat(&mut rng);
        let triples = build_triples(rows, rows, &offsets, trial, false).unwrap();
        if triples.is_empty() {
            // A lone single-atom graph has no negative; nothing to compare.
            exact += 1;
            chunk_ok += 1;
            continue;
        }
        let mut tape = Tape::new();
        let a = tape.constant(lm.clone());
        let t = tape.constant(mp.clone());
        let loss = triplet_loss(&mut tape, a, t, &triples, margin).unwrap();
        let got = tape.value(loss).item();

        let row = |m: &Tensor, i: usize| m.row(i).to_vec();
        let av: Vec<Vec<f64>> = triples.anchor.iter().map(|&i| row(&lm, i)).collect();
        let pv: Vec<Vec<f64>> = triples.positive.iter().map(|&i| row(&mp, i)).collect();
        let nv: Vec<Vec<f64>> = triples.negative.iter().map(|&i| row(&mp, i)).collect();
        let want = brute_force(&av, &pv, &nv, margin);
        if got.to_bits() == want.to_bits() {
            exact += 1;
        }
        let terms: Vec<_> = (0..av.len()).map(|i| (av[i].clone(), pv[i].clone(), nv[i].clone())).collect();
        let flat: f64 = terms.iter().fold(0.0, |s, (a, p, n)| s + triplet_term(a, p, n, margin));
        let n = terms.len();
        if [1, 2, n].iter().all(|&k| triplet_loss_chunked(&terms, margin, k).to_bits() == flat.to_bits()) {
            chunk_ok += 1;
        }
    }
    outcome(
        3,
        exact == batches && chunk_ok == batches,
        format!("tape == brute force bitwise on {exact}/{batches} batches; chunking K in {{1,2,N}} exact on {chunk_ok}/{batches}"),
    )
}

fn criterion_4() -> Outcome {
    let vocab = Vocabulary::build(corpus_smiles());
    let s = corpus_samples(&vocab);
    let refs: Vec<&Sample> = s.iter().take(6).collect();
    let b = batch(&refs);
    let d = 64;

    // lm2mpnn with zero LM rows vs the MPNN baseline on the same parameters.
    let joint = default_model(Strategy::Lm2Mpnn, FusionOp::Sum, &vocab, 5);
    let mut base_cfg = joint.config.clone();
    base_cfg.strategy = Strategy::MpnnBaseline;
    let base = Model::new(base_cfg, 0).unwrap();
    let mut t1 = Tape::new();
    let z = t1.constant(Tensor::zeros(&[b.graphs.num_nodes(), d]));
    let j = joint
        .forward_with(&mut t1, &joint.params, &b, 0, Overrides { lm_nodes: Some(z), ..Overrides::default() })
        .unwrap();
    let mut t2 = Tape::new();
    let p = base.forward(&mut t2, &joint.params, &b, 0).unwrap();
    let lm2mpnn = bits(t1.value(j.prediction)) == bits(t2.value(p.prediction));

    // mpnn2lm with zero MPNN states vs the encoder with the same mean readout.
    let m = default_model(Strategy::Mpnn2Lm, FusionOp::Sum, &vocab, 6);
    let mut t1 = Tape::new();
    let z = t1.constant(Tensor::zeros(&[b.graphs.num_nodes(), d]));
    let j = m
        .forward_with(&mut t1, &m.params, &b, 0, Overrides { mpnn_nodes: Some(z), ..Overrides::default() })
        .unwrap();
    let mut t2 = Tape::new();
    let out = m.lm().run(&mut t2, &m.params, &b.tokens).unwrap();
    let pooled = m.lm().mean_readout(&mut t2, out.output, &b.tokens).unwrap();
    let pred = m.head().forward(&mut t2, &m.params, pooled).unwrap();
    let mpnn2lm = bits(t1.value(j.prediction)) == bits(t2.value(pred));

    // alpha = 0: total loss is the prediction loss, bit for bit.
    let mut alpha_ok = true;
    for strategy in [Strategy::ContrastNode, Strategy::ContrastGraph] {
        let mut m = default_model(strategy, FusionOp::Sum, &vocab, 7);
        m.config.contrast.alpha = 0.0;
        m.config.contrast.alpha_graph = 0.0;
        let mut tape = Tape::new();
        let (total, fwd) = m.loss(&mut tape, &m.params, &b, 3).unwrap();
        let pred = m.prediction_loss(&mut tape, fwd.prediction, &b.labels).unwrap();
        alpha_ok &= fwd.contrast.is_some() && tape.value(total).item().to_bits() == tape.value(pred).item().to_bits();
    }
    outcome(
        4,
        lm2mpnn && mpnn2lm && alpha_ok,
        format!("lm2mpnn==mpnn baseline {lm2mpnn}; mpnn2lm==encoder {mpnn2lm}; alpha=0 node/graph {alpha_ok}"),
    )
}

/// Relabel the nodes of a single-graph batch by `perm` (new index of old node i).
fn permuted(g: &GraphBatch, perm: &[usize]) -> GraphBatch {
    let n = g.num_nodes();
    let w = g.node_features.cols();
    let mut feats = vec![0.0; n * w];
    for (old, &new) in perm.iter().enumerate() {
        feats[new * w..(new + 1) * w].copy_from_slice(g.node_features.row(old));
    }
    GraphBatch {
        node_features: Tensor::new(vec![n, w], feats).unwrap(),
        offsets: g.offsets.clone(),
        edges: g.edges.iter().map(|&(u, v)| (perm[v], perm[u])).collect(),
        edge_features: g.edge_features.clone(),
    }
}

fn criterion_5() -> Outcome {
    let vocab = Vocabulary::build(corpus_smiles());
    let s = corpus_samples(&vocab);
    let all: Vec<&Sample> = s.iter().collect();
    let big = batch(&all);

    let mpnn = default_model(Strategy::MpnnBaseline, FusionOp::Sum, &vocab, 8);
    let mut tape = Tape::new();
    let together = mpnn.gnn().forward(&mut tape, &mpnn.params, &big.graphs, None).unwrap();
    let together = tape.value(together.graphs).clone();
    let mut perm_err: f64 = 0.0;
    let mut batch_err: f64 = 0.0;
    let mut rng = SplitMix64::new(77);
    for (i, one) in s.iter().enumerate() {
        let g = GraphBatch::from_graphs(&[&one.graph]);
        let mut t = Tape::new();
        let alone = mpnn.gnn().forward(&mut t, &mpnn.params, &g, None).unwrap();
        let alone = t.value(alone.graphs).clone();
        let mut perm: Vec<usize> = (0..g.num_nodes()).collect();
        rng.shuffle(&mut perm);
        let mut t = Tape::new();
        let shuffled = mpnn.gnn().forward(&mut t, &mpnn.params, &permuted(&g, &perm), None).unwrap();
        perm_err = perm_err.max(t.value(shuffled.graphs).max_abs_diff(&alone));
        let row = Tensor::new(vec![1, alone.cols()], together.row(i).to_vec()).unwrap();
        batch_err = batch_err.max(row.max_abs_diff(&alone));
    }

    let lm = default_model(Strategy::LmBaseline, FusionOp::Sum, &vocab, 9);
    let mut tape = Tape::new();
    let enc = lm.lm().run(&mut tape, &lm.params, &big.tokens).unwrap();
    let out = tape.value(enc.output).clone();
    let len = big.tokens.len;
    let mut pad_err: f64 = 0.0;
    for (i, one) in s.iter().enumerate() {
        let b = batch(&[one]);
        let mut t = Tape::new();
        let e = lm.lm().run(&mut t, &lm.params, &b.tokens).unwrap();
        let alone = t.value(e.output);
        for r in 0..one.tokens.len() {
            let x = out.row(i * len + r);
            let y = alone.row(r);
            for (a, c) in x.iter().zip(y) {
                pad_err = pad_err.max((a - c).abs());
            }
        }
    }
    let mut row_err: f64 = 0.0;
    let mut masked_mass: f64 = 0.0;
    for &att in &enc.attention {
        let p = tape.value(att);
        let data = p.data();
        for bi in 0..big.tokens.batch {
            let mask = big.tokens.mask_row(bi);
            for q in 0..len {
                let row = &data[(bi * len + q) * len..(bi * len + q + 1) * len];
                row_err = row_err.max((row.iter().sum::<f64>() - 1.0).abs());
                for (k, &m) in mask.iter().enumerate() {
                    if !m {
                        masked_mass = masked_mass.max(row[k].abs());
                    }
                }
            }
        }
    }
    let ok = perm_err < 1e-9 && batch_err < 1e-9 && pad_err < 1e-9 && row_err < 1e-12 && masked_mass == 0.0;
    outcome(
        5,
        ok,
        format!(
            "readout permutation {perm_err:.1e}, batch {batch_err:.1e}; LM padding {pad_err:.1e}; attention row sums {row_err:.1e}, masked mass {masked_mass:.1e}"
        ),
    )
}

fn molfuse() -> Command {
    Command::new(env!("CARGO_BIN_EXE_molfuse"))
}

fn criterion_6(tmp: &Path) -> Outcome {
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let dir = tmp.join(format!("det-{run}"));
        let status = molfuse()
            .args(["train", "--strategy", "contrast-node", "--dataset"])
            .arg(esol())
            .args(["--seeds", "0", "--out"])
            .arg(&dir)
            .status()
            .unwrap();
        let read = |f: &str| std::fs::read(dir.join(f)).unwrap_or_default();
        outputs.push((
            status.success(),
            read("report.txt"),
            read("seeds.jsonl"),
            read("checkpoint-seed0.bin"),
        ));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    let same = a.1 == b.1 && a.2 == b.2 && a.3 == b.3 && !a.2.is_empty();
    outcome(
        6,
        a.0 && b.0 && same,
        format!(
            "exit ok {}/{}; report, per-seed records and checkpoint identical: {same} ({} report bytes, {} checkpoint bytes)",
            a.0 as u8 + b.0 as u8,
            2,
            a.1.len(),
            a.3.len()
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    let cfg = RunConfig {
        dataset: esol(),
        seeds: vec![0],
        ..RunConfig::default()
    };
    let data = prepare(&cfg).unwrap();
    for strategy in Strategy::ALL {
        let c = RunConfig { strategy, ..cfg.clone() };
        let start = Instant::now();
        let (_, r) = train_one(&c, &data, 0).unwrap();
        let secs = start.elapsed().as_secs_f64();
        let test = r.test_metric.unwrap_or(f64::NAN);
        let pass = test < r.naive_baseline && secs < 1800.0 && r.epochs_run <= 50;
        ok &= pass;
        lines.push(format!(
            "{strategy} mae {test:.4} vs naive {:.4} ({} epochs, {secs:.0}s){}",
            r.naive_baseline,
            r.epochs_run,
            if pass { "" } else { " FAIL" }
        ));
    }
    let bbbp = data_dir().join("bbbp.csv");
    let mut out = if bbbp.exists() {
        let cfg = RunConfig {
            dataset: bbbp.clone(),
            task: TaskKind::BinaryClassification,
            label_column: "p_np".into(),
            seeds: vec![0],
            ..RunConfig::default()
        };
        let data = prepare(&cfg).unwrap();
        for strategy in Strategy::ALL {
            let c = RunConfig { strategy, ..cfg.clone() };
            let (_, r) = train_one(&c, &data, 0).unwrap();
            let acc = r.test_metric.unwrap_or(f64::NAN);
            let pass = acc > r.naive_baseline;
            ok &= pass;
            lines.push(format!("BBBP {strategy} acc {acc:.4} vs majority {:.4}", r.naive_baseline));
        }
        outcome(7, ok, String::new())
    } else {
        let mut o = outcome(7, false, String::new());
        o.unavailable = true;
        lines.push(format!(
            "BBBP part not evaluated: {} is absent (not obtainable offline); ESOL part {}",
            bbbp.display(),
            if ok { "passes" } else { "fails" }
        ));
        o
    };
    if !ok {
        out.unavailable = false;
        out.pass = false;
    }
    out.detail = lines.join("; ");
    out
}

fn criterion_8() -> Outcome {
    let cfg = RunConfig {
        dataset: esol(),
        seeds: vec![0],
        ..RunConfig::default()
    };
    let data = prepare(&cfg).unwrap();
    let report = profile(&cfg, &data, &[Strategy::ContrastNode, Strategy::ContrastGraph], 1, 5).unwrap();
    let node = report.median_of(Strategy::ContrastNode).unwrap();
    let graph = report.median_of(Strategy::ContrastGraph).unwrap();
    let rows = attention_scaling(&[64, 128, 256, 512], 64, 15, 0).unwrap();
    let ratio = fitted_doubling_ratio(&rows).unwrap();
    let steps: Vec<String> = rows.iter().filter_map(|r| r.ratio).map(|x| format!("{x:.2}")).collect();
    outcome(
        8,
        graph <= node && (2.0..=6.0).contains(&ratio),
        format!(
            "median epoch graph {graph:.3}s <= node {node:.3}s: {}; attention time per doubling {ratio:.2} (steps {})",
            graph <= node,
            steps.join(", ")
        ),
    )
}

fn criterion_9(tmp: &Path) -> Outcome {
    // Structure check: full five-seed protocol per cell on a reduced model and
    // data budget so the three sweeps finish in minutes.
    let small = [
        "--limit", "120", "--max-epochs", "2", "--set", "hidden_dim=16", "--set", "ffn_dim=32", "--set",
        "num_layers=1", "--set", "num_heads=2", "--set", "message_steps=2",
    ];
    let sweeps: [(&str, &str, Vec<String>); 3] = [
        ("splits", "contrast-node", SPLIT_ROWS.iter().map(|r| r.0.to_string()).collect()),
        ("fusion", "late-fusion", FusionOp::ALL.iter().map(|f| f.to_string()).collect()),
        ("gnn", "mpnn-baseline", vec!["MPNN".into(), "GraphConv".into()]),
    ];
    let mut ok = true;
    let mut notes = Vec::new();
    let cell = |s: &str| {
        let (m, sd) = s.split_once(" ± ").unwrap_or(("", ""));
        let four = |x: &str| x.split_once('.').is_some_and(|(_, f)| f.len() == 4) && x.parse::<f64>().is_ok();
        four(m) && four(sd)
    };
    for (kind, strategy, labels) in sweeps {
        let dir = tmp.join(format!("ablate-{kind}"));
        let status = molfuse()
            .args(["ablate", kind, "--strategy", strategy, "--dataset"])
            .arg(esol())
            .args(small)
            .arg("--out")
            .arg(&dir)
            .status()
            .unwrap();
        let text = std::fs::read_to_string(dir.join("table.txt")).unwrap_or_default();
        let jsonl = std::fs::read_to_string(dir.join("table.jsonl")).unwrap_or_default();
        let body: Vec<&str> = text.lines().skip(3).take(labels.len()).collect();
        let rows_ok = body.len() == labels.len()
            && body
                .iter()
                .zip(&labels)
                .all(|(line, label)| line.starts_with(label.as_str()) && cell(line[label.len()..].trim()));
        let seeds_ok = jsonl.lines().count() == labels.len()
            && jsonl.lines().all(|l| {
                let v: serde_json::Value = serde_json::from_str(l).unwrap();
                v["seeds"] == serde_json::json!([0, 7, 42, 100, 2024]) && v["successes"] == 5
            });
        let footer = text.contains(FOOTER);
        let pass = status.success() && rows_ok && seeds_ok && footer;
        ok &= pass;
        notes.push(format!("{kind}: {} rows {rows_ok}, 5 seeds {seeds_ok}, footer {footer}", labels.len()));
    }
    outcome(9, ok, notes.join("; "))
}

#[test]
fn acceptance_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let runs: Vec<Box<dyn Fn() -> Outcome>> = vec![
        Box::new(criterion_1),
        Box::new(criterion_2),
        Box::new(criterion_3),
        Box::new(criterion_4),
        Box::new(criterion_5),
        Box::new(|| criterion_6(tmp.path())),
        Box::new(criterion_7),
        Box::new(criterion_8),
        Box::new(|| criterion_9(tmp.path())),
    ];
    let mut outcomes = Vec::new();
    for run in runs {
        let o = run();
        println!(
            "criterion {}: {} — {}",
            o.id,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        outcomes.push(o);
    }
    let failed: Vec<u32> = outcomes.iter().filter(|o| !o.pass && !o.unavailable).map(|o| o.id).collect();
    let missing: Vec<u32> = outcomes.iter().filter(|o| o.unavailable).map(|o| o.id).collect();
    if !missing.is_empty() {
        println!("criteria not evaluable for lack of data: {missing:?}");
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
