use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::meshgraph::fixtures::grid;
use crate::tensor::Tensor;

fn tiny(ratios: Vec<usize>, m_enc: usize, m_gu: usize) -> ModelConfig {
    ModelConfig {
        latent: 6,
        hidden: 8,
        hidden_layers: 1,
        m_enc,
        m_gu,
        pooling_ratios: ratios,
        ..ModelConfig::default()
    }
}

fn f64_params(model: &Model, seed: u64) -> ParamStore<f64> {
    // random biases and norm offsets as well, so no tensor is trivially zero
    let mut store = model.init_params(seed).cast::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for id in 0..store.len() {
        if store.spec(id).shape.len() == 1 {
            store
                .tensor_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    store
}

fn zero_params(model: &Model) -> ParamStore<f64> {
    let mut store = model.init_params(0).cast::<f64>();
    for id in 0..store.len() {
        store
            .tensor_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    store
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::new(
        vec![rows, cols],
        (0..rows * cols)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect(),
    )
    .unwrap()
}

fn input_for(model: &Model, state: &MeshState) -> ModelInput {
    let g = model.graph(state).unwrap();
    let plan = model.plan(&g).unwrap();
    ModelInput::new(&g, &plan, &InputNormalizers::new(2)).unwrap()
}

#[test]
fn zero_final_layers_make_gnb_an_identity() {
    let model = Model::new(tiny(vec![], 0, 0)).unwrap();
    let mut store = f64_params(&model, 1);
    let gnb = &model.layout().interp;
    for mlp in [&gnb.edge_mlp, &gnb.node_mlp] {
        // the output layer norm reduces a constant row to its offset
        let beta = *mlp.param_ids().last().unwrap();
        for id in [mlp.final_weight(), mlp.final_bias(), beta] {
            store
                .tensor_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let flow = Flow::from_pairs(3, 2, &[(0, 0), (1, 0), (2, 1)]).unwrap();
    let mut tape = Tape::<f64>::new();
    let src = tape.constant(random_matrix(3, 6, &mut rng));
    let tgt = tape.constant(random_matrix(2, 6, &mut rng));
    let e = tape.constant(random_matrix(3, 6, &mut rng));
    let (t2, e2) = gnb.apply(&mut tape, &store, src, tgt, e, &flow).unwrap();
    assert_eq!(tape.value(t2), tape.value(tgt));
    assert_eq!(tape.value(e2), tape.value(e));
}

#[test]
fn isolated_target_aggregates_zero() {
    let model = Model::new(tiny(vec![], 0, 0)).unwrap();
    let store = f64_params(&model, 3);
    let gnb = &model.layout().interp;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let flow = Flow::from_pairs(2, 2, &[(0, 0), (1, 0)]).unwrap();
    let xs = random_matrix(2, 6, &mut rng);
    let xt = random_matrix(2, 6, &mut rng);
    let mut tape = Tape::<f64>::new();
    let src = tape.constant(xs);
    let tgt = tape.constant(xt.clone());
    let e = tape.constant(random_matrix(2, 6, &mut rng));
    let (t2, _) = gnb.apply(&mut tape, &store, src, tgt, e, &flow).unwrap();

    let mut alone = Tape::<f64>::new();
    let mut row = xt.row(1).to_vec();
    row.extend([0.0; 6]);
    let x = alone.constant(Tensor::new(vec![1, 12], row).unwrap());
    let d = gnb.node_mlp.forward(&mut alone, &store, x).unwrap();
    let expect: Vec<f64> = xt
        .row(1)
        .iter()
        .zip(alone.value(d).data())
        .map(|(a, b)| a + b)
        .collect();
    assert_eq!(tape.value(t2).row(1), expect.as_slice());
}

#[test]
fn gnb_is_permutation_equivariant() {
    let model = Model::new(tiny(vec![], 0, 0)).unwrap();
    let store = f64_params(&model, 5);
    let gnb = &model.layout().interp;
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pairs = [(0, 1), (1, 0), (1, 2), (2, 1), (0, 3), (3, 0)];
    let x = random_matrix(4, 6, &mut rng);
    let e = random_matrix(pairs.len(), 6, &mut rng);
    let perm = [2, 0, 3, 1];
    let run = |pairs: &[(usize, usize)], x: Tensor<f64>, e: Tensor<f64>| {
        let flow = Flow::from_pairs(4, 4, pairs).unwrap();
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x);
        let ev = tape.constant(e);
        let (t, _) = gnb.apply(&mut tape, &store, xv, xv, ev, &flow).unwrap();
        tape.value(t).clone()
    };
    let base = run(&pairs, x.clone(), e.clone());
    let mut px = vec![0.0; 24];
    for v in 0..4 {
        px[perm[v] * 6..perm[v] * 6 + 6].copy_from_slice(x.row(v));
    }
    // relabel endpoints and reverse the edge order
    let ppairs: Vec<(usize, usize)> = pairs
        .iter()
        .rev()
        .map(|&(a, b)| (perm[a], perm[b]))
        .collect();
    let pe: Vec<f64> = (0..pairs.len())
        .rev()
        .flat_map(|k| e.row(k).to_vec())
        .collect();
    let out = run(
        &ppairs,
        Tensor::new(vec![4, 6], px).unwrap(),
        Tensor::new(vec![6, 6], pe).unwrap(),
    );
    for v in 0..4 {
        for (a, b) in base.row(v).iter().zip(out.row(perm[v])) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn encoder_without_processors_is_lifting() {
    let model = Model::new(tiny(vec![2], 0, 1)).unwrap();
    let store = f64_params(&model, 7);
    let input = input_for(&model, &grid(3, 2));
    let mut tape = Tape::<f64>::new();
    let enc = model.encode(&mut tape, &store, &input).unwrap();
    let mut direct = Tape::<f64>::new();
    let raw = direct.constant(input.node_e.clone());
    let lifted = model
        .layout()
        .lift
        .node_e
        .forward(&mut direct, &store, raw)
        .unwrap();
    assert_eq!(tape.value(enc.elem), direct.value(lifted));
    for v in [enc.mesh, enc.elem, enc.elem_edges, enc.em_edges] {
        assert_eq!(tape.value(v).cols(), 6);
    }
}

#[test]
fn baseline_is_flat_gnb_stack() {
    let mut cfg = tiny(vec![], 1, 0);
    cfg.m_proc = 2;
    let model = Model::new(cfg).unwrap();
    let store = f64_params(&model, 8);
    let input = input_for(&model, &grid(3, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_matrix(input.num_elem, 6, &mut rng);
    let e = random_matrix(input.ee.num_edges(), 6, &mut rng);
    let mut tape = Tape::<f64>::new();
    let (xv, ev) = (tape.constant(x.clone()), tape.constant(e.clone()));
    let out = model
        .gunet_apply(&mut tape, &store, xv, ev, &input)
        .unwrap();
    let mut manual = Tape::<f64>::new();
    let (mut mx, mut me) = (manual.constant(x), manual.constant(e));
    for gnb in &model.layout().flat.blocks {
        (mx, me) = gnb
            .apply(&mut manual, &store, mx, mx, me, &input.ee)
            .unwrap();
    }
    assert_eq!(tape.value(out), manual.value(mx));
}

#[test]
fn ratio_one_stage_with_zero_mlps_is_identity() {
    let model = Model::new(tiny(vec![1], 0, 2)).unwrap();
    let store = zero_params(&model);
    let input = input_for(&model, &grid(3, 2));
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random_matrix(input.num_elem, 6, &mut rng);
    let e = random_matrix(input.ee.num_edges(), 6, &mut rng);
    let mut tape = Tape::<f64>::new();
    let (xv, ev) = (tape.constant(x.clone()), tape.constant(e));
    let out = model
        .gunet_apply(&mut tape, &store, xv, ev, &input)
        .unwrap();
    assert_eq!(tape.value(out), &x);
}

/// Which inputs can reach each node: propagates dependency sets through the
/// same block structure as the network, tracking edges as well as nodes.
fn support_oracle(
    model: &Model,
    input: &ModelInput,
    pairs0: &[(usize, usize)],
    plan: &PoolingPlan,
) -> Vec<BTreeSet<usize>> {
    type Sets = Vec<BTreeSet<usize>>;
    fn gnb(x: &mut Sets, e: &mut Sets, pairs: &[(usize, usize)]) {
        for (k, &(s, t)) in pairs.iter().enumerate() {
            let add: Vec<usize> = x[s].iter().chain(&x[t]).copied().collect();
            e[k].extend(add);
        }
        let mut nx = x.clone();
        for (k, &(_, t)) in pairs.iter().enumerate() {
            nx[t].extend(e[k].iter().copied());
        }
        *x = nx;
    }
    let cfg = model.config();
    let hierarchy = plan.hierarchy(pairs0).unwrap();
    let mut x: Sets = (0..input.num_elem).map(|v| BTreeSet::from([v])).collect();
    let mut e: Sets = vec![BTreeSet::new(); pairs0.len()];
    let mut pairs = pairs0.to_vec();
    let mut skips = Vec::new();
    for (stage, pooled) in plan.stages.iter().zip(&hierarchy) {
        for _ in 0..cfg.m_gu {
            gnb(&mut x, &mut e, &pairs);
        }
        skips.push((x.clone(), e.clone(), pairs.clone()));
        x = stage
            .members
            .iter()
            .map(|m| m.iter().flat_map(|&v| x[v].clone()).collect())
            .collect();
        e = pooled
            .provenance
            .iter()
            .map(|p| p.iter().flat_map(|&k| e[k].clone()).collect())
            .collect();
        pairs = pooled.edges.clone();
    }
    for _ in 0..cfg.m_gu {
        gnb(&mut x, &mut e, &pairs);
    }
    for (i, stage) in plan.stages.iter().enumerate().rev() {
        let (sx, se, sp) = skips[i].clone();
        x = (0..stage.num_fine())
            .map(|v| x[stage.cluster_index[v]].union(&sx[v]).copied().collect())
            .collect();
        e = se;
        for _ in 0..cfg.m_gu {
            gnb(&mut x, &mut e, &sp);
        }
    }
    x
}

#[test]
fn gunet_reach_matches_support_oracle() {
    // a one-row strip: element face adjacency is a path
    let state = grid(24, 1);
    for (ratios, m_gu) in [(vec![2], 1), (vec![2], 2), (vec![3, 2], 1)] {
        let model = Model::new(tiny(ratios.clone(), 0, m_gu)).unwrap();
        let store = f64_params(&model, 11);
        let g = model.graph(&state).unwrap();
        let plan = model.plan(&g).unwrap();
        let input = ModelInput::new(&g, &plan, &InputNormalizers::new(2)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_matrix(input.num_elem, 6, &mut rng);
        let e = random_matrix(input.ee.num_edges(), 6, &mut rng);
        let run = |x: Tensor<f64>| {
            let mut tape = Tape::<f64>::new();
            let (xv, ev) = (tape.constant(x), tape.constant(e.clone()));
            let out = model
                .gunet_apply(&mut tape, &store, xv, ev, &input)
                .unwrap();
            tape.value(out).clone()
        };
        let base = run(x.clone());
        let oracle = support_oracle(&model, &input, &g.elem_elem.pairs(), &plan);
        for target in [0, 11, 47] {
            let mut empirical = BTreeSet::new();
            for j in 0..input.num_elem {
                let mut xp = x.clone();
                xp.data_mut()[j * 6..j * 6 + 6]
                    .iter_mut()
                    .for_each(|v| *v += 1.0);
                let out = run(xp);
                if out.row(target) != base.row(target) {
                    empirical.insert(j);
                }
            }
            assert_eq!(
                empirical, oracle[target],
                "ratios {ratios:?}, m_gu {m_gu}, node {target}"
            );
            // on a path, the farthest influencing node is at least the formula's reach
            let reach = empirical.iter().map(|&j| j.abs_diff(target)).max().unwrap();
            let formula = crate::pooling::receptive_field(0, m_gu, &ratios);
            assert!(
                reach >= formula.min(target.max(47 - target)),
                "reach {reach} < {formula}"
            );
        }
    }
}

#[test]
fn decoder_widths_and_zero_final_weights() {
    let model = Model::new(tiny(vec![2], 1, 1)).unwrap();
    let mut store = f64_params(&model, 13);
    let input = input_for(&model, &grid(3, 2));
    let mut tape = Tape::<f64>::new();
    let p = model.forward(&mut tape, &store, &input).unwrap();
    assert_eq!(tape.value(p.mesh).shape(), &[input.num_mesh, 2]);
    assert_eq!(tape.value(p.elem).shape(), &[input.num_elem, 2]);
    for mlp in [&model.layout().elem_out, &model.layout().mesh_out] {
        for id in [mlp.final_weight(), mlp.final_bias()] {
            store
                .tensor_mut(id)
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
    }
    let mut tape = Tape::<f64>::new();
    let p = model.forward(&mut tape, &store, &input).unwrap();
    assert!(tape
        .value(p.mesh)
        .data()
        .iter()
        .chain(tape.value(p.elem).data())
        .all(|&v| v == 0.0));
}

#[test]
fn encoder_parameters_receive_gradient() {
    let model = Model::new(tiny(vec![2], 1, 1)).unwrap();
    let store = f64_params(&model, 14);
    let mut state = grid(3, 2);
    state
        .positions
        .iter_mut()
        .enumerate()
        .for_each(|(i, p)| *p += 0.01 * ((i * 7 % 5) as f64));
    let input = input_for(&model, &state);
    let mut tape = Tape::<f64>::new();
    let p = model.forward(&mut tape, &store, &input).unwrap();
    let root = tape.sum(p.mesh);
    let grads = tape.backward(root, store.len()).unwrap();
    let id = store.id("encoder.node_m.w0").unwrap();
    assert!(grads.get(id).unwrap().data().iter().any(|&g| g != 0.0));
}

#[test]
fn forward_is_deterministic() {
    let model = Model::new(tiny(vec![2], 1, 1)).unwrap();
    let store = model.init_params(15);
    let input = input_for(&model, &grid(4, 2));
    assert_eq!(
        model.predict(&store, &input).unwrap(),
        model.predict(&store, &input).unwrap()
    );
}

#[test]
fn param_count_depends_only_on_config() {
    let a = Model::new(tiny(vec![2, 2], 1, 2)).unwrap();
    let b = Model::new(tiny(vec![2, 2], 1, 2)).unwrap();
    assert_eq!(a.layout().num_params(), b.layout().num_params());
    assert!(a.check_params(&b.init_params(3)).is_ok());
    let c = Model::new(tiny(vec![2], 1, 2)).unwrap();
    assert!(a.check_params(&c.init_params(3)).is_err());
}

#[test]
fn parameter_names_follow_hierarchy() {
    let model = Model::new(tiny(vec![2, 2], 1, 2)).unwrap();
    let names: Vec<&str> = model
        .param_specs()
        .iter()
        .map(|s| s.name.as_str())
        .collect();
    assert!(names.contains(&"gunet.stage0.prE.gnb1.edge_mlp.w0"));
    assert!(names.contains(&"gunet.stage1.prD.gnb0.node_mlp.ln_gamma"));
    assert!(names.contains(&"gunet.bottom.gnb1.node_mlp.b1"));
    assert!(!names.iter().any(|n| n.starts_with("processor.")));
    assert_eq!(gnb_suffixes(model.config()).unwrap().len(), 12);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = tiny(vec![0], 1, 1);
    assert!(Model::new(cfg.clone()).is_err());
    cfg.pooling_ratios = vec![2];
    cfg.m_proc = 3;
    assert!(Model::new(cfg).is_err());
}
