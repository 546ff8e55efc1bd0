mod common;

use common::*;
use molfrag::chem::parse_smiles;
use molfrag::model::*;
use molfrag::par::Exec;
use molfrag::tensor::{grad_check, AdamW, AdamWConfig, Graph, Tensor};
use molfrag::tokenizer::{build_frag_graph, FragGraph, TokenSeq, DIST_CAP};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn run(model: &Model, input: &MolInput) -> (Tensor, Vec<Vec<Tensor>>) {
    let mut g = Graph::new(&model.params);
    let masked = vec![false; input.n_tokens()];
    let out = model
        .forward(
            &mut g,
            input,
            ForwardOpts {
                masked: &masked,
                dropout_rng: None,
            },
        )
        .unwrap();
    (g.value(out.states).clone(), out.attention)
}

fn setup(seed: u64) -> (molfrag::tokenizer::Tokenizer, Model) {
    let tok = small_tokenizer(40);
    let mut model = Model::new(tiny_config(tok.vocab().len()), seed).unwrap();
    perturb(&mut model, 0.3, seed + 100);
    (tok, model)
}

#[test]
fn zero_gin_layers_return_input_embeddings() {
    let tok = small_tokenizer(30);
    let mut cfg = tiny_config(tok.vocab().len());
    cfg.gin_layers = 0;
    let model = Model::new(cfg, 3).unwrap();
    let input = &encode_all(&["CCO"], &tok, Regime::Fragment)[0];
    let mut g = Graph::new(&model.params);
    let a = model.atom_inputs(&mut g, input).unwrap();
    let b = model.gin_forward(&mut g, input).unwrap();
    assert_eq!(g.value(a), g.value(b));
}

#[test]
fn gin_aggregation_closed_forms() {
    let tok = small_tokenizer(30);
    let mut model = Model::new(tiny_config(tok.vocab().len()), 4).unwrap();
    let d = model.config.hidden_dim;
    set_param(&mut model, "gin0.eps", Tensor::zeros(1, 1));
    set_param(&mut model, "gin0.edge_type", Tensor::zeros(4, d));
    set_param(&mut model, "gin0.edge_dir", Tensor::zeros(3, d));
    // Molecule regime so the single bond is always used.
    let pair = &encode_all(&["CO"], &tok, Regime::Molecule)[0];
    let mut g = Graph::new(&model.params);
    let h = model.atom_inputs(&mut g, pair).unwrap();
    let agg = model.gin_aggregate(&mut g, pair, h, 0).unwrap();
    let (hv, av) = (g.value(h).clone(), g.value(agg).clone());
    for c in 0..d {
        let s = hv.get(0, c) + hv.get(1, c);
        assert_eq!(av.get(0, c), s);
        assert_eq!(av.get(1, c), s);
    }
    let single = &encode_all(&["C"], &tok, Regime::Molecule)[0];
    let mut g = Graph::new(&model.params);
    let h = model.atom_inputs(&mut g, single).unwrap();
    let agg = model.gin_aggregate(&mut g, single, h, 0).unwrap();
    assert_eq!(g.value(h), g.value(agg));
}

#[test]
fn attention_pool_closed_forms() {
    let tok = small_tokenizer(30);
    let mut model = Model::new(tiny_config(tok.vocab().len()), 5).unwrap();
    let d = model.config.hidden_dim;
    let mut w = Tensor::zeros(d, 1);
    w.set(0, 0, 1.0);
    set_param(&mut model, "pool.w", w);
    let mut h = Tensor::zeros(3, d);
    h.set(0, 0, 2f64.ln());
    for c in 1..d {
        h.set(0, c, 3.0);
        h.set(1, c, -1.5);
        h.set(2, c, 0.25 * c as f64);
    }
    let mut g = Graph::new(&model.params);
    let hv = g.constant(h.clone());
    // Atoms 0 and 1 form token 0; atom 2 alone is token 1.
    let pooled = model.attention_pool(&mut g, hv, &[0, 0, 1], 2).unwrap();
    let p = g.value(pooled);
    for c in 0..d {
        let expect = 2.0 / 3.0 * h.get(0, c) + 1.0 / 3.0 * h.get(1, c);
        assert!((p.get(0, c) - expect).abs() < 1e-14);
        assert_eq!(p.get(1, c), h.get(2, c));
    }
    set_param(&mut model, "pool.w", Tensor::zeros(d, 1));
    let mut g = Graph::new(&model.params);
    let hv = g.constant(h.clone());
    let pooled = model.attention_pool(&mut g, hv, &[0, 0, 0], 1).unwrap();
    for c in 0..d {
        let mean = (h.get(0, c) + h.get(1, c) + h.get(2, c)) / 3.0;
        assert!((g.value(pooled).get(0, c) - mean).abs() < 1e-14);
    }
}

#[test]
fn fusion_gate_limits() {
    let tok = small_tokenizer(30);
    let mut model = Model::new(tiny_config(tok.vocab().len()), 6).unwrap();
    let d = model.config.hidden_dim;
    let mut id = Tensor::zeros(d, d);
    (0..d).for_each(|i| id.set(i, i, 1.0));
    set_param(&mut model, "fuse.align", id);
    set_param(&mut model, "fuse.gate", Tensor::zeros(2 * d, d));
    let e = Tensor::from_vec(1, d, (0..d).map(|i| i as f64 * 0.3 + 0.1).collect()).unwrap();
    let h = Tensor::from_vec(1, d, (0..d).map(|i| 2.0 - i as f64 * 0.2).collect()).unwrap();
    let mut g = Graph::new(&model.params);
    let (ev, hv) = (g.constant(e.clone()), g.constant(h.clone()));
    let (_, gate, z) = model.fuse(&mut g, ev, hv).unwrap();
    assert!(g.value(gate).data.iter().all(|&x| x == 0.5));
    for c in 0..d {
        assert!((g.value(z).get(0, c) - 0.5 * (e.get(0, c) + h.get(0, c))).abs() < 1e-15);
    }
    set_param(&mut model, "fuse.gate", Tensor::full(2 * d, d, 1e4));
    let mut g = Graph::new(&model.params);
    let (ev, hv) = (g.constant(e), g.constant(h.clone()));
    let (_, gate, z) = model.fuse(&mut g, ev, hv).unwrap();
    assert!(g.value(gate).data.iter().all(|&x| x == 1.0));
    assert!(max_abs_diff(&g.value(z).data, &h.data) < 1e-15);
}

#[test]
fn structural_bias_composition() {
    let (tok, model) = setup(7);
    assert!(tok.vocab().len() > 6);
    let mol = parse_smiles("CCO").unwrap();
    let seq = TokenSeq {
        token_ids: vec![4, 5, 6],
        partition: vec![vec![0], vec![1], vec![2]],
        fallback_flags: vec![false; 3],
    };
    // Hand-built fragment graph: 0–1 bonded (single, no direction), 2
    // unreachable from both.
    let fg = FragGraph {
        n: 3,
        adjacency: vec![vec![false, true, false], vec![true, false, false], vec![false; 3]],
        bond_attr: vec![
            vec![None, Some((0, 0)), None],
            vec![Some((0, 0)), None, None],
            vec![None; 3],
        ],
        dist: vec![vec![0, 1, DIST_CAP], vec![1, 0, DIST_CAP], vec![DIST_CAP, DIST_CAP, 0]],
    };
    let input = MolInput::new(&mol, &seq, &fg, Regime::Fragment);
    let mut g = Graph::new(&model.params);
    let bias = model.structural_bias(&mut g, &input).unwrap();
    let p = |name: &str| model.params.get(model.params.id(name).unwrap()).clone();
    let (adj, dist, ty, dir) = (p("bias.adj"), p("bias.dist"), p("bias.type"), p("bias.dir"));
    for (h, &b) in bias.iter().enumerate() {
        let b = g.value(b);
        for k in 0..4 {
            assert_eq!(b.get(0, k), 0.0);
            assert_eq!(b.get(k, 0), 0.0);
        }
        assert_eq!(
            b.get(1, 2),
            adj.get(1, h) + dist.get(1, h) + ty.get(0, h) + dir.get(0, h)
        );
        assert_eq!(b.get(1, 3), adj.get(0, h) + dist.get(8, h));
        assert_eq!(b.get(3, 3), adj.get(0, h) + dist.get(0, h));
    }
    let fresh = Model::new(tiny_config(tok.vocab().len()), 1).unwrap();
    let mut g = Graph::new(&fresh.params);
    for b in fresh.structural_bias(&mut g, &input).unwrap() {
        assert!(g.value(b).data.iter().all(|&x| x == 0.0));
    }
}

#[test]
fn attention_rows_are_distributions() {
    let (tok, model) = setup(8);
    for input in encode_all(&["CC(=O)Oc1ccccc1C(=O)O", "OCC(O)CO"], &tok, Regime::Fragment) {
        let padded = input.padded(2);
        let (_, maps) = run(&model, &padded);
        let real = padded.n_tokens() + 1;
        for layer in &maps {
            for a in layer {
                for i in 0..padded.seq_len {
                    let row = a.row(i);
                    assert!((row[..real].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                    assert!(row[real..].iter().all(|&x| x == 0.0));
                }
            }
        }
    }
}

#[test]
fn pad_invariance() {
    let (tok, model) = setup(9);
    for input in encode_all(&["CCN(CC)CCOC(=O)c1ccc(N)cc1", "C"], &tok, Regime::Fragment) {
        let (plain, _) = run(&model, &input);
        let (padded, _) = run(&model, &input.padded(4));
        let real = input.n_tokens() + 1;
        assert!(max_abs_diff(&plain.data, &padded.data[..real * plain.cols]) <= 1e-6);
    }
}

#[test]
fn permutation_equivariance() {
    let (tok, model) = setup(10);
    let mol = parse_smiles("CC(C)Cc1ccc(cc1)C(C)C(=O)O").unwrap();
    let seq = tok.tokenize(&mol);
    let m = seq.len();
    assert!(m >= 3, "need several tokens, got {m}");
    let perm: Vec<usize> = (0..m).rev().collect();
    let permuted = TokenSeq {
        token_ids: perm.iter().map(|&i| seq.token_ids[i]).collect(),
        partition: perm.iter().map(|&i| seq.partition[i].clone()).collect(),
        fallback_flags: perm.iter().map(|&i| seq.fallback_flags[i]).collect(),
    };
    let a = MolInput::new(&mol, &seq, &build_frag_graph(&mol, &seq), Regime::Fragment);
    let b = MolInput::new(&mol, &permuted, &build_frag_graph(&mol, &permuted), Regime::Fragment);
    let (sa, _) = run(&model, &a);
    let (sb, _) = run(&model, &b);
    assert!(max_abs_diff(sa.row(0), sb.row(0)) <= 1e-6);
    for (new, &old) in perm.iter().enumerate() {
        assert!(max_abs_diff(sa.row(old + 1), sb.row(new + 1)) <= 1e-6);
    }
}

#[test]
fn regimes_agree_on_single_fragment() {
    let (tok, model) = setup(11);
    let mol = parse_smiles("c1ccccc1O").unwrap();
    let seq = TokenSeq {
        token_ids: vec![5],
        partition: vec![(0..mol.n_atoms()).collect()],
        fallback_flags: vec![false],
    };
    let fg = build_frag_graph(&mol, &seq);
    let (a, _) = run(&model, &MolInput::new(&mol, &seq, &fg, Regime::Fragment));
    let (b, _) = run(&model, &MolInput::new(&mol, &seq, &fg, Regime::Molecule));
    assert_eq!(a, b);
    let _ = tok;
}

#[test]
fn masked_positions_cut_atom_path() {
    let (tok, model) = setup(12);
    let input = &encode_all(&["CC(C)Cc1ccc(cc1)C(C)C(=O)O"], &tok, Regime::Fragment)[0];
    let m = input.n_tokens();
    let ex = MaskedExample::new(input, vec![0, m - 1]);
    let mut g = Graph::new(&model.params);
    let out = model
        .forward(
            &mut g,
            input,
            ForwardOpts {
                masked: &ex.masked,
                dropout_rng: None,
            },
        )
        .unwrap();
    let logits = model.mlm_logits(&mut g, out.states, &ex.positions).unwrap();
    let loss = g.cross_entropy(logits, &ex.targets, None).unwrap();
    let grads = g.backward(loss);
    let pooled = grads.of(out.pooled).unwrap();
    let atoms = grads.of(out.atoms).unwrap();
    for t in 0..m {
        let zero = pooled.row(t).iter().all(|&x| x == 0.0);
        assert_eq!(zero, ex.masked[t], "token {t}");
    }
    for a in 0..input.n_atoms {
        if ex.masked[input.owner[a]] {
            assert!(atoms.row(a).iter().all(|&x| x == 0.0), "atom {a}");
        }
    }
    // The fused row of a masked position is the [MASK] embedding.
    let table = model.params.get(model.params.id("token.embed").unwrap());
    assert_eq!(
        g.value(out.fused).row(0),
        table.row(molfrag::tokenizer::MASK_ID as usize)
    );
}

#[test]
fn full_model_gradient_check() {
    let (tok, model) = setup(13);
    let inputs = encode_all(
        &["CC(=O)Oc1ccccc1C(=O)O", "OCC(O)CO", "CCN(CC)CCOC(=O)c1ccc(N)cc1"],
        &tok,
        Regime::Fragment,
    );
    let masks: Vec<MaskedExample> = inputs
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mut rng = ChaCha8Rng::seed_from_u64(i as u64);
            MaskedExample::new(x, sample_mask_positions(&x.token_ids, tok.vocab(), 0.4, &mut rng))
        })
        .collect();
    let report = grad_check(&model.params, |g| {
        let mut total = None;
        for (x, ex) in inputs.iter().zip(&masks) {
            let (l, _) = masked_loss(&model, g, x, ex, None)?;
            total = Some(match total {
                None => l,
                Some(t) => g.add(t, l)?,
            });
        }
        Ok(g.scale(total.unwrap(), 1.0 / 3.0))
    })
    .unwrap();
    assert_eq!(report.per_param.len(), model.params.len());
    assert!(report.max_rel_error <= 1e-4, "{:?}", report.per_param);
}

#[test]
fn initial_loss_is_log_vocab() {
    let tok = small_tokenizer(40);
    let model = Model::new(tiny_config(tok.vocab().len()), 2).unwrap();
    let input = &encode_all(&["CCN(CC)CCOC(=O)c1ccc(N)cc1"], &tok, Regime::Fragment)[0];
    let ex = MaskedExample::new(input, vec![0]);
    let mut g = Graph::new(&model.params);
    let (loss, _) = masked_loss(&model, &mut g, input, &ex, None).unwrap();
    let expect = (tok.vocab().len() as f64).ln();
    assert!((g.value(loss).item() - expect).abs() < 1e-12);
}

#[test]
fn sequential_and_parallel_steps_match() {
    let tok = small_tokenizer(40);
    let inputs = encode_all(common::SMALL_CORPUS, &tok, Regime::Fragment);
    let batch: Vec<&MolInput> = inputs.iter().collect();
    let masks: Vec<MaskedExample> = inputs.iter().map(|x| MaskedExample::new(x, vec![0])).collect();
    let mut results = Vec::new();
    for exec in [Exec::Sequential, Exec::Parallel] {
        let mut model = Model::new(tiny_config(tok.vocab().len()), 3).unwrap();
        let mut opt = AdamW::new(&model.params, AdamWConfig::default());
        for _ in 0..3 {
            pretrain_step(&mut model, &mut opt, &batch, &masks, Some((1, 2)), exec).unwrap();
        }
        results.push(model.params);
    }
    for ((_, _, a), (_, _, b)) in results[0].iter().zip(results[1].iter()) {
        assert_eq!(a, b);
    }
}

#[test]
fn stage_one_freezes_backbone() {
    let tok = small_tokenizer(40);
    let mut model = Model::new(tiny_config(tok.vocab().len()), 4).unwrap();
    let before = model.params.clone();
    let inputs = encode_all(common::SMALL_CORPUS, &tok, Regime::Fragment);
    let n = inputs.len();
    let labels = Tensor::from_vec(n, 1, (0..n).map(|i| (i % 4 == 0) as u8 as f64).collect()).unwrap();
    let data = TaskData {
        inputs,
        labels,
        valid: vec![true; n],
    };
    let cfg = TrainConfig {
        epochs: 0,
        head_epochs: 3,
        batch_size: 4,
        ..Default::default()
    };
    let report = finetune(&mut model, &data, TaskKind::Binary, &cfg, Exec::Sequential).unwrap();
    assert_eq!(report.pos_weight, Some(vec![3.0]));
    for (id, name, t) in before.iter() {
        assert_eq!(model.params.get(id), t, "{name}");
    }
    let (hw, _) = model.task_head_ids().unwrap();
    assert_eq!(model.params.name(hw), "task.w");
}

#[test]
fn finetune_errors() {
    let tok = small_tokenizer(40);
    let mut model = Model::new(tiny_config(tok.vocab().len()), 4).unwrap();
    let empty = TaskData {
        inputs: vec![],
        labels: Tensor::zeros(0, 1),
        valid: vec![],
    };
    let cfg = TrainConfig::default();
    assert!(matches!(
        finetune(&mut model, &empty, TaskKind::Binary, &cfg, Exec::Sequential),
        Err(FinetuneError::EmptySplit(_))
    ));
    let inputs = encode_all(&["CCO", "CCN"], &tok, Regime::Fragment);
    let bad = TaskData {
        inputs,
        labels: Tensor::zeros(3, 1),
        valid: vec![true; 3],
    };
    assert!(matches!(
        finetune(&mut model, &bad, TaskKind::Binary, &cfg, Exec::Sequential),
        Err(FinetuneError::LabelShapeMismatch { .. })
    ));
}

#[test]
fn checkpoint_roundtrip_restores_model() {
    let (tok, mut model) = setup(14);
    model.add_task_head(2, 0);
    let bytes = molfrag::tensor::write_checkpoint("cfg", &model.params);
    let ck = molfrag::tensor::read_checkpoint(&bytes).unwrap();
    let restored = Model::from_params(model.config.clone(), &ck.params).unwrap();
    let input = &encode_all(&["OCC(O)CO"], &tok, Regime::Fragment)[0];
    assert_eq!(run(&model, input).0, run(&restored, input).0);
    assert_eq!(restored.n_tasks(), Some(2));
}
